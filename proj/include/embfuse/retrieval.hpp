#pragma once

#include "embfuse/decoder.hpp"
#include "embfuse/embio.hpp"
#include "embfuse/lsh.hpp"
#include "embfuse/matrix.hpp"
#include "embfuse/quantizer.hpp"

#include <cstddef>
#include <memory>
#include <optional>
#include <string>
#include <utility>
#include <variant>
#include <vector>

namespace embfuse {

/// Scores every (query, doc) pair of a fixed query and document set.
class Scorer {
public:
    virtual ~Scorer() = default;
    virtual std::size_t num_queries() const = 0;
    virtual std::size_t num_docs() const = 0;
    virtual double score(std::size_t query, std::size_t doc) const = 0;
};

/// Cosine similarity with 64-bit accumulation. Zero rows fail when scored.
class CosineScorer final : public Scorer {
public:
    CosineScorer(EmbeddingMatrix queries, EmbeddingMatrix docs);
    std::size_t num_queries() const override { return queries_.rows(); }
    std::size_t num_docs() const override { return docs_.rows(); }
    double score(std::size_t query, std::size_t doc) const override;

private:
    EmbeddingMatrix queries_;
    EmbeddingMatrix docs_;
    std::vector<double> query_inv_norm_;
    std::vector<double> doc_inv_norm_;
};

/// SimHash estimate over sign codes.
class HammingScorer final : public Scorer {
public:
    HammingScorer(BitCodes queries, BitCodes docs);
    std::size_t num_queries() const override { return queries_.rows; }
    std::size_t num_docs() const override { return docs_.rows; }
    double score(std::size_t query, std::size_t doc) const override;

private:
    BitCodes queries_;
    BitCodes docs_;
};

struct RetrievalTask {
    std::string name{"task"};
    EmbeddingMatrix queries;
    std::vector<std::string> query_ids;
    EmbeddingMatrix docs;
    std::vector<std::string> doc_ids;
    Qrels qrels;
    std::size_t k{10};
};

/// Throws Validation if ids do not match row counts or are not unique.
void validate_task(const RetrievalTask& task);

/// Exhaustive top-k per query: score descending, ties by doc id ascending, ranks from 1.
RunFile search(const std::vector<std::string>& query_ids, const std::vector<std::string>& doc_ids,
               const Scorer& scorer, std::size_t k, const std::string& tag = "embfuse",
               std::size_t threads = 0);

enum class GainMode { Linear, Exponential };

struct EvalReport {
    std::string task;
    std::string transform;
    std::size_t k{10};
    /// Queries with at least one relevant judgment, ordered by query id.
    std::vector<std::pair<std::string, double>> per_query;
    /// Run queries skipped because qrels hold no relevant document for them.
    std::vector<std::string> excluded;
    double mean{0.0};
};

/// nDCG@k with DCG = sum gain(rel_i) / log2(i + 1) and IDCG from the ideal ordering.
EvalReport ndcg_at_k(const RunFile& run, const Qrels& qrels, std::size_t k,
                     GainMode gains = GainMode::Linear);

// Representation transforms applied to both queries and documents.
struct RawStage {};
struct TruncateStage {
    std::size_t k;
};
struct DecoderStage {
    std::shared_ptr<const DecoderModel> model;
    std::optional<std::size_t> stop;
};
struct QuantizeStage {
    std::shared_ptr<const QuantizerCalibration> calibration;
};
struct LshStage {
    std::shared_ptr<const LshProjector> projector;
};
using TransformStage = std::variant<RawStage, TruncateStage, DecoderStage, QuantizeStage, LshStage>;
using TransformChain = std::vector<TransformStage>;

std::string describe(const TransformChain& chain);

struct EvalOptions {
    GainMode gains{GainMode::Linear};
    std::size_t threads{0};  // 0 = thread_count()
};

struct PipelineResult {
    RunFile run;
    EvalReport report;
};

/// Applies the chain to queries and docs, searches, and scores the run.
/// An LSH stage must come last; float stages are scored by cosine.
PipelineResult run_pipeline(const RetrievalTask& task, const TransformChain& chain,
                            const EvalOptions& options = {});

inline EvalReport evaluate_pipeline(const RetrievalTask& task, const TransformChain& chain,
                                    const EvalOptions& options = {}) {
    return run_pipeline(task, chain, options).report;
}

/// "task\ttransform\tmean_ndcg" header plus one row per report.
std::string format_report_tsv(const std::vector<EvalReport>& reports);
/// "task\ttransform\tquery_id\tndcg" header plus one row per evaluated query.
std::string format_per_query_tsv(const EvalReport& report);

}  // namespace embfuse
