#include "embfuse/retrieval.hpp"

#include "embfuse/error.hpp"
#include "embfuse/linalg.hpp"
#include "embfuse/parallel.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <numeric>
#include <set>
#include <sstream>
#include <unordered_map>

namespace embfuse {

namespace {

std::vector<double> inverse_norms(const EmbeddingMatrix& m) {
    std::vector<double> out(m.rows());
    for (std::size_t i = 0; i < m.rows(); ++i) {
        const double norm = l2_norm(m.row(i));
        out[i] = norm == 0.0 ? 0.0 : 1.0 / norm;
    }
    return out;
}

template <class... Ts>
struct overloaded : Ts... {
    using Ts::operator()...;
};
template <class... Ts>
overloaded(Ts...) -> overloaded<Ts...>;

std::string describe_stage(const TransformStage& stage) {
    return std::visit(
        overloaded{
            [](const RawStage&) { return std::string("raw"); },
            [](const TruncateStage& s) { return "truncate[:" + std::to_string(s.k) + "]"; },
            [](const DecoderStage& s) {
                std::string out = "decoder(" + std::to_string(s.model->d_in) + "->" +
                                  std::to_string(s.model->d_out) + ")";
                if (s.stop) {
                    out += "[:" + std::to_string(*s.stop) + "]";
                }
                return out;
            },
            [](const QuantizeStage& s) { return "quantize(b=" + std::to_string(s.calibration->bits) + ")"; },
            [](const LshStage& s) {
                return "lsh(" + std::to_string(s.projector->d_proj()) + ",seed=" +
                       std::to_string(s.projector->seed()) + ")";
            },
        },
        stage);
}

EmbeddingMatrix apply_float_stage(const TransformStage& stage, const EmbeddingMatrix& m) {
    return std::visit(
        overloaded{
            [&](const RawStage&) { return m; },
            [&](const TruncateStage& s) { return truncate(m, s.k); },
            [&](const DecoderStage& s) {
                auto h = forward(*s.model, m);
                if (s.stop) {
                    if (*s.stop > s.model->d_out) {
                        throw Error(ErrorCode::Dimension, "stop " + std::to_string(*s.stop) +
                                                              " exceeds decoder output " +
                                                              std::to_string(s.model->d_out));
                    }
                    h = truncate(h, *s.stop);
                }
                return h;
            },
            [&](const QuantizeStage& s) { return dequantize(*s.calibration, quantize(*s.calibration, m)); },
            [&](const LshStage&) -> EmbeddingMatrix {
                throw Error(ErrorCode::Validation, "lsh stage must be the last stage");
            },
        },
        stage);
}

}  // namespace

CosineScorer::CosineScorer(EmbeddingMatrix queries, EmbeddingMatrix docs)
    : queries_{std::move(queries)}, docs_{std::move(docs)} {
    if (queries_.dims() != docs_.dims()) {
        throw Error(ErrorCode::Dimension, "query dims " + std::to_string(queries_.dims()) +
                                              " differ from doc dims " + std::to_string(docs_.dims()));
    }
    query_inv_norm_ = inverse_norms(queries_);
    doc_inv_norm_ = inverse_norms(docs_);
}

double CosineScorer::score(std::size_t query, std::size_t doc) const {
    if (query_inv_norm_[query] == 0.0) {
        throw Error(ErrorCode::UndefinedSimilarity, "query vector is zero; cosine undefined");
    }
    if (doc_inv_norm_[doc] == 0.0) {
        throw Error(ErrorCode::UndefinedSimilarity,
                    "document row " + std::to_string(doc) + " is zero; cosine undefined");
    }
    return dot(queries_.row(query), docs_.row(doc)) * query_inv_norm_[query] * doc_inv_norm_[doc];
}

HammingScorer::HammingScorer(BitCodes queries, BitCodes docs)
    : queries_{std::move(queries)}, docs_{std::move(docs)} {
    if (queries_.bits_per_row != docs_.bits_per_row) {
        throw Error(ErrorCode::Dimension, "query codes have " + std::to_string(queries_.bits_per_row) +
                                              " bits, doc codes " + std::to_string(docs_.bits_per_row));
    }
}

double HammingScorer::score(std::size_t query, std::size_t doc) const {
    return hamming_similarity(queries_.row(query), docs_.row(doc), queries_.bits_per_row);
}

void validate_task(const RetrievalTask& task) {
    auto check = [](const std::vector<std::string>& ids, std::size_t rows, const char* what) {
        if (ids.size() != rows) {
            throw Error(ErrorCode::Validation, std::string(what) + " id list has " +
                                                   std::to_string(ids.size()) + " entries for " +
                                                   std::to_string(rows) + " rows");
        }
        std::set<std::string> seen(ids.begin(), ids.end());
        if (seen.size() != ids.size()) {
            throw Error(ErrorCode::Validation, std::string(what) + " ids are not unique");
        }
    };
    check(task.query_ids, task.queries.rows(), "query");
    check(task.doc_ids, task.docs.rows(), "document");
    if (task.k < 1) {
        throw Error(ErrorCode::Validation, "cutoff k must be at least 1");
    }
}

RunFile search(const std::vector<std::string>& query_ids, const std::vector<std::string>& doc_ids,
               const Scorer& scorer, std::size_t k, const std::string& tag, std::size_t threads) {
    if (doc_ids.empty() || scorer.num_docs() == 0) {
        throw Error(ErrorCode::Validation, "search over an empty document set");
    }
    if (query_ids.size() != scorer.num_queries() || doc_ids.size() != scorer.num_docs()) {
        throw Error(ErrorCode::Validation, "id lists do not match scorer sizes");
    }
    if (k < 1) {
        throw Error(ErrorCode::Validation, "cutoff k must be at least 1");
    }
    const std::size_t depth = std::min(k, doc_ids.size());
    std::vector<std::vector<RunEntry>> per_query(query_ids.size());
    parallel_for(
        query_ids.size(),
        [&](std::size_t q) {
            std::vector<std::pair<double, std::size_t>> scored(doc_ids.size());
            try {
                for (std::size_t d = 0; d < doc_ids.size(); ++d) {
                    scored[d] = {scorer.score(q, d), d};
                }
            } catch (const Error& e) {
                throw Error(e.code(), "query " + query_ids[q] + ": " + e.what());
            }
            std::partial_sort(scored.begin(), scored.begin() + static_cast<std::ptrdiff_t>(depth),
                              scored.end(), [&](const auto& a, const auto& b) {
                                  if (a.first != b.first) {
                                      return a.first > b.first;
                                  }
                                  return doc_ids[a.second] < doc_ids[b.second];
                              });
            auto& out = per_query[q];
            out.reserve(depth);
            for (std::size_t r = 0; r < depth; ++r) {
                out.push_back({query_ids[q], doc_ids[scored[r].second], static_cast<int>(r + 1),
                               scored[r].first, tag});
            }
        },
        threads == 0 ? thread_count() : threads);
    RunFile run;
    for (auto& entries : per_query) {
        std::move(entries.begin(), entries.end(), std::back_inserter(run.entries));
    }
    return run;
}

EvalReport ndcg_at_k(const RunFile& run, const Qrels& qrels, std::size_t k, GainMode gains) {
    if (qrels.entries.empty()) {
        throw Error(ErrorCode::Validation, "qrels are empty");
    }
    if (k < 1) {
        throw Error(ErrorCode::Validation, "cutoff k must be at least 1");
    }
    auto gain = [gains](int rel) {
        return gains == GainMode::Linear ? static_cast<double>(rel) : std::exp2(rel) - 1.0;
    };
    std::unordered_map<std::string, std::unordered_map<std::string, int>> judged;
    for (const auto& e : qrels.entries) {
        judged[e.query_id][e.doc_id] = e.relevance;
    }
    std::map<std::string, std::vector<const RunEntry*>> ranked;
    for (const auto& e : run.entries) {
        ranked[e.query_id].push_back(&e);
    }

    EvalReport report;
    report.k = k;
    double sum = 0.0;
    for (auto& [query, entries] : ranked) {
        const auto it = judged.find(query);
        std::vector<int> ideal;
        if (it != judged.end()) {
            for (const auto& [doc, rel] : it->second) {
                if (rel > 0) {
                    ideal.push_back(rel);
                }
            }
        }
        if (ideal.empty()) {
            report.excluded.push_back(query);
            continue;
        }
        std::sort(ideal.begin(), ideal.end(), std::greater<>());
        double idcg = 0.0;
        for (std::size_t i = 0; i < std::min(k, ideal.size()); ++i) {
            idcg += gain(ideal[i]) / std::log2(static_cast<double>(i) + 2.0);
        }
        std::sort(entries.begin(), entries.end(),
                  [](const RunEntry* a, const RunEntry* b) { return a->rank < b->rank; });
        double dcg = 0.0;
        for (const RunEntry* e : entries) {
            if (e->rank < 1 || static_cast<std::size_t>(e->rank) > k) {
                continue;
            }
            const auto rel = it->second.find(e->doc_id);
            if (rel != it->second.end() && rel->second > 0) {
                dcg += gain(rel->second) / std::log2(static_cast<double>(e->rank) + 1.0);
            }
        }
        const double ndcg = dcg / idcg;
        report.per_query.emplace_back(query, ndcg);
        sum += ndcg;
    }
    if (!report.per_query.empty()) {
        report.mean = sum / static_cast<double>(report.per_query.size());
    }
    return report;
}

std::string describe(const TransformChain& chain) {
    if (chain.empty()) {
        return "raw";
    }
    std::string out;
    for (const auto& stage : chain) {
        if (!out.empty()) {
            out += " > ";
        }
        out += describe_stage(stage);
    }
    return out;
}

PipelineResult run_pipeline(const RetrievalTask& task, const TransformChain& chain,
                            const EvalOptions& options) {
    validate_task(task);
    EmbeddingMatrix queries = task.queries;
    EmbeddingMatrix docs = task.docs;
    std::unique_ptr<Scorer> scorer;
    for (std::size_t i = 0; i < chain.size(); ++i) {
        const auto& stage = chain[i];
        try {
            if (const auto* lsh = std::get_if<LshStage>(&stage)) {
                if (i + 1 != chain.size()) {
                    throw Error(ErrorCode::Validation, "lsh stage must be the last stage");
                }
                scorer = std::make_unique<HammingScorer>(project_and_binarize(*lsh->projector, queries),
                                                         project_and_binarize(*lsh->projector, docs));
            } else {
                queries = apply_float_stage(stage, queries);
                docs = apply_float_stage(stage, docs);
            }
        } catch (const Error& e) {
            throw Error(e.code(), "stage " + std::to_string(i + 1) + " (" + describe_stage(stage) +
                                      "): " + e.what());
        }
    }
    if (!scorer) {
        scorer = std::make_unique<CosineScorer>(std::move(queries), std::move(docs));
    }
    PipelineResult result;
    result.run = search(task.query_ids, task.doc_ids, *scorer, task.k, "embfuse", options.threads);
    result.report = ndcg_at_k(result.run, task.qrels, task.k, options.gains);
    result.report.task = task.name;
    result.report.transform = describe(chain);
    return result;
}

std::string format_report_tsv(const std::vector<EvalReport>& reports) {
    std::string out = "task\ttransform\tmean_ndcg\n";
    char value[64];
    for (const auto& r : reports) {
        std::snprintf(value, sizeof value, "%.6f", r.mean);
        out += r.task + "\t" + r.transform + "\t" + value + "\n";
    }
    return out;
}

std::string format_per_query_tsv(const EvalReport& report) {
    std::string out = "task\ttransform\tquery_id\tndcg\n";
    char value[64];
    for (const auto& [query, score] : report.per_query) {
        std::snprintf(value, sizeof value, "%.6f", score);
        out += report.task + "\t" + report.transform + "\t" + query + "\t" + value + "\n";
    }
    return out;
}

}  // namespace embfuse
