#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <variant>
#include <vector>

namespace embfuse::cli {

/// One value of a `key = value` line: integer, real, boolean, string, or a list of these.
struct ConfigValue {
    using Scalar = std::variant<std::int64_t, double, bool, std::string>;
    std::variant<Scalar, std::vector<Scalar>> value;
};

/// Pipeline settings read from a TOML-style file. Every field is optional so
/// command-line flags can take precedence over what the file provides.
struct PipelineConfig {
    // training
    std::optional<std::size_t> batch_size;
    std::optional<std::size_t> epochs;
    std::optional<double> learning_rate;
    std::optional<std::string> optimizer;  // "adam" | "sgd"
    std::optional<double> beta1;
    std::optional<double> beta2;
    std::optional<double> epsilon;
    std::optional<double> momentum;
    std::optional<std::uint64_t> seed;
    std::optional<double> validation_fraction;
    std::optional<bool> normalize_inputs;
    std::optional<std::string> activation;  // "none" | "tanh"
    std::optional<std::size_t> d_out;
    std::optional<std::vector<std::size_t>> stops;
    // quantization, lsh, evaluation
    std::optional<unsigned> bits;
    std::optional<std::size_t> dproj;
    std::optional<std::size_t> k;
    std::optional<std::string> gains;  // "linear" | "exponential"
    std::optional<std::string> task;
    // paths
    std::vector<std::filesystem::path> inputs;
    std::optional<std::filesystem::path> output;
    std::optional<std::filesystem::path> checkpoint;
    std::optional<std::filesystem::path> calibration;
    std::optional<std::filesystem::path> projector;
    std::optional<std::filesystem::path> queries;
    std::optional<std::filesystem::path> query_ids;
    std::optional<std::filesystem::path> docs;
    std::optional<std::filesystem::path> doc_ids;
    std::optional<std::filesystem::path> qrels;
};

/// Parses `key = value` lines with `#` comments. Unknown keys, duplicate keys
/// and ill-typed values raise embfuse::Error (Parse or Validation) with a line number.
PipelineConfig parse_config(const std::string& text);
PipelineConfig load_config(const std::filesystem::path& path);

}  // namespace embfuse::cli
