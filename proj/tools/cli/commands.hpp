#pragma once

#include "embfuse/error.hpp"
#include "embfuse/retrieval.hpp"

#include <cstddef>
#include <ostream>
#include <string>
#include <vector>

namespace embfuse::cli {

/// 0 ok, 1 usage/validation, 2 numeric failure, 3 I/O.
int exit_code_for(ErrorCode code);

/// Parses a comma-separated chain of stages for inputs of `input_dims` columns:
///   raw | truncate:K | decoder:PATH[:STOP] | quantize:PATH | lsh:PATH | lsh:DPROJ:SEED
TransformChain parse_transform(const std::string& spec, std::size_t input_dims);

/// Entry point shared by the embfuse binary and the tests.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace embfuse::cli
