#include "cli/commands.hpp"

#include "cli/config.hpp"
#include "embfuse/decoder.hpp"
#include "embfuse/embio.hpp"
#include "embfuse/linalg.hpp"
#include "embfuse/lsh.hpp"
#include "embfuse/quantizer.hpp"

#include <CLI11.hpp>

#include <charconv>
#include <cstdio>
#include <fstream>
#include <functional>
#include <memory>
#include <optional>
#include <sstream>

namespace embfuse::cli {

namespace fs = std::filesystem;

namespace {

template <typename T>
T pick(const CLI::Option* flag, const T& flag_value, const std::optional<T>& from_config, T fallback) {
    if (flag->count() > 0) {
        return flag_value;
    }
    if (from_config) {
        return *from_config;
    }
    return fallback;
}

std::optional<fs::path> pick_path(const CLI::Option* flag, const std::string& flag_value,
                                  const std::optional<fs::path>& from_config) {
    if (flag->count() > 0) {
        return fs::path(flag_value);
    }
    return from_config;
}

fs::path require_path(const std::optional<fs::path>& path, const std::string& what) {
    if (!path || path->empty()) {
        throw Error(ErrorCode::Validation, "missing required " + what + " path");
    }
    return *path;
}

void check_input(const fs::path& path) {
    std::error_code ec;
    if (!fs::is_regular_file(path, ec)) {
        throw Error(ErrorCode::Io, "input file " + path.string() + " does not exist");
    }
}

void check_output(const fs::path& path) {
    const auto parent = path.has_parent_path() ? path.parent_path() : fs::path(".");
    std::error_code ec;
    if (!fs::is_directory(parent, ec)) {
        throw Error(ErrorCode::Io, "output directory " + parent.string() + " does not exist");
    }
    if (fs::is_directory(path, ec)) {
        throw Error(ErrorCode::Io, "output path " + path.string() + " is a directory");
    }
}

std::size_t parse_count(const std::string& text, const std::string& what) {
    std::size_t value = 0;
    auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), value);
    if (ec != std::errc{} || ptr != text.data() + text.size()) {
        throw Error(ErrorCode::Validation, what + ": \"" + text + "\" is not a non-negative integer");
    }
    return value;
}

std::vector<std::size_t> parse_stop_list(const std::string& text) {
    std::vector<std::size_t> stops;
    std::istringstream in(text);
    std::string item;
    while (std::getline(in, item, ',')) {
        if (!item.empty()) {
            stops.push_back(parse_count(item, "stop list"));
        }
    }
    return stops;
}

std::vector<std::string> split(const std::string& text, char sep) {
    std::vector<std::string> parts;
    std::string part;
    std::istringstream in(text);
    while (std::getline(in, part, sep)) {
        parts.push_back(part);
    }
    if (!text.empty() && text.back() == sep) {
        parts.emplace_back();
    }
    return parts;
}

std::string format_fixed(double value, int decimals) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.*f", decimals, value);
    return buf;
}

std::string format_loss(double value) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.9g", value);
    return buf;
}

/// Default stops: the standard list below d_out, closed by d_out itself.
std::vector<std::size_t> default_stops(std::size_t d_out) {
    std::vector<std::size_t> stops;
    for (auto s : kDefaultStops) {
        if (s < d_out) {
            stops.push_back(s);
        }
    }
    stops.push_back(d_out);
    return stops;
}

void write_text(const std::string& text, const fs::path& path) {
    std::ofstream file(path, std::ios::binary | std::ios::trunc);
    file << text;
    if (!file) {
        throw Error(ErrorCode::Io, "write failed for " + path.string());
    }
}

struct Context {
    std::ostream& out;
    std::ostream& err;
    std::string config_path;
    CLI::Option* config_opt{nullptr};

    PipelineConfig config() const {
        if (config_opt != nullptr && config_opt->count() > 0) {
            return load_config(config_path);
        }
        return {};
    }
};

// Each subcommand owns its flag storage and a runner executed after parsing.
struct Command {
    CLI::App* app{nullptr};
    std::function<void()> run;
};

Command add_concat(CLI::App& root, Context& ctx) {
    struct Flags {
        std::vector<std::string> inputs;
        std::string output;
        bool normalize{true};
    };
    auto flags = std::make_shared<Flags>();
    auto* app = root.add_subcommand("concat", "Concatenate embedding matrices column-wise (same rows, list order)");
    auto* in = app->add_option("-i,--input", flags->inputs, "Input EMBF file; repeat for each source in order");
    auto* out = app->add_option("-o,--output", flags->output, "Output EMBF file");
    auto* norm = app->add_flag("--normalize,!--no-normalize", flags->normalize,
                               "L2-normalize each source's rows before concatenating (default on)");
    return {app, [=, &ctx] {
                const auto cfg = ctx.config();
                std::vector<fs::path> inputs(flags->inputs.begin(), flags->inputs.end());
                if (in->count() == 0) {
                    inputs = cfg.inputs;
                }
                if (inputs.empty()) {
                    throw Error(ErrorCode::Validation, "concat needs at least one --input");
                }
                const auto output = require_path(pick_path(out, flags->output, cfg.output), "--output");
                for (const auto& p : inputs) {
                    check_input(p);
                }
                check_output(output);
                const bool normalize = pick(norm, flags->normalize, cfg.normalize_inputs, true);

                std::vector<EmbeddingMatrix> parts;
                for (const auto& p : inputs) {
                    auto m = read_embeddings(p);
                    parts.push_back(normalize ? l2_normalize_rows(m) : std::move(m));
                }
                const auto joined = concat(std::span<const EmbeddingMatrix>(parts));
                write_embeddings(joined, output);
                ctx.out << "concat: " << joined.rows() << " rows, " << joined.dims() << " dims -> "
                        << output.string() << "\n";
            }};
}

Command add_train(CLI::App& root, Context& ctx) {
    struct Flags {
        std::string input;
        std::string output;
        std::size_t batch_size{};
        std::size_t epochs{};
        double learning_rate{};
        std::string optimizer;
        double momentum{};
        std::uint64_t seed{};
        double validation_fraction{};
        std::size_t d_out{};
        std::string stops;
        std::string activation;
        bool normalize{true};
    };
    auto f = std::make_shared<Flags>();
    auto* app = root.add_subcommand("train", "Train a Matryoshka decoder on a concatenated corpus");
    auto* in = app->add_option("-i,--input", f->input, "Training corpus (EMBF)");
    auto* out = app->add_option("-o,--output", f->output, "Checkpoint output (EMBD)");
    auto* batch = app->add_option("--batch-size", f->batch_size, "Rows per batch, >= 2 (default 256)");
    auto* epochs = app->add_option("--epochs", f->epochs, "Training epochs (default 100)");
    auto* lr = app->add_option("--lr", f->learning_rate, "Learning rate (default 1e-3)");
    auto* opt = app->add_option("--optimizer", f->optimizer, "adam or sgd (default adam)");
    auto* mom = app->add_option("--momentum", f->momentum, "SGD momentum (default 0)");
    auto* seed = app->add_option("--seed", f->seed, "Seed for initialization and shuffling (default 0)");
    auto* val = app->add_option("--val-fraction", f->validation_fraction,
                                "Held-out fraction for best-epoch selection (default 0.05)");
    auto* dout = app->add_option("--d-out", f->d_out, "Decoder output dimension (default 768)");
    auto* stops = app->add_option("--stops", f->stops,
                                  "Comma-separated Matryoshka stops ending at d_out "
                                  "(default 32,64,128,200,256,300,384,512,768 truncated to d_out)");
    auto* act = app->add_option("--activation", f->activation, "none or tanh (default none)");
    auto* norm = app->add_flag("--normalize,!--no-normalize", f->normalize,
                               "L2-normalize input rows inside the decoder (default on)");
    return {app, [=, &ctx] {
                const auto cfg = ctx.config();
                const auto input = require_path(pick_path(in, f->input, cfg.inputs.empty()
                                                                            ? std::optional<fs::path>{}
                                                                            : cfg.inputs.front()),
                                                "--input");
                const auto output = require_path(pick_path(out, f->output, cfg.checkpoint ? cfg.checkpoint : cfg.output),
                                                 "--output");
                check_input(input);
                check_output(output);

                TrainConfig tc;
                tc.batch_size = pick(batch, f->batch_size, cfg.batch_size, tc.batch_size);
                tc.epochs = pick(epochs, f->epochs, cfg.epochs, tc.epochs);
                tc.learning_rate = pick(lr, f->learning_rate, cfg.learning_rate, tc.learning_rate);
                const auto optimizer = pick(opt, f->optimizer, cfg.optimizer, std::string("adam"));
                if (optimizer == "adam") {
                    tc.optimizer.kind = OptimizerKind::Adam;
                } else if (optimizer == "sgd") {
                    tc.optimizer.kind = OptimizerKind::Sgd;
                } else {
                    throw Error(ErrorCode::Validation, "unknown optimizer " + optimizer);
                }
                tc.optimizer.beta1 = cfg.beta1.value_or(tc.optimizer.beta1);
                tc.optimizer.beta2 = cfg.beta2.value_or(tc.optimizer.beta2);
                tc.optimizer.epsilon = cfg.epsilon.value_or(tc.optimizer.epsilon);
                tc.optimizer.momentum = pick(mom, f->momentum, cfg.momentum, tc.optimizer.momentum);
                tc.seed = pick(seed, f->seed, cfg.seed, tc.seed);
                tc.validation_fraction = pick(val, f->validation_fraction, cfg.validation_fraction,
                                              tc.validation_fraction);
                tc.d_out = pick(dout, f->d_out, cfg.d_out, tc.d_out);
                tc.normalize_inputs = pick(norm, f->normalize, cfg.normalize_inputs, true);
                const auto activation = pick(act, f->activation, cfg.activation, std::string("none"));
                if (activation == "none") {
                    tc.activation = Activation::None;
                } else if (activation == "tanh") {
                    tc.activation = Activation::Tanh;
                } else {
                    throw Error(ErrorCode::Validation, "unknown activation " + activation);
                }
                std::vector<std::size_t> stop_list =
                    stops->count() > 0 ? parse_stop_list(f->stops) : cfg.stops.value_or(default_stops(tc.d_out));
                validate_train_config(tc);
                validate_stops(stop_list, tc.d_out);

                tc.on_epoch = [&ctx](const EpochRecord& r) {
                    ctx.out << "epoch=" << r.epoch << " train_loss=" << format_loss(r.train_loss);
                    if (r.val_loss) {
                        ctx.out << " val_loss=" << format_loss(*r.val_loss);
                    }
                    ctx.out << "\n";
                };
                const auto corpus = read_embeddings(input);
                const auto ckpt = train(corpus, tc, stop_list);
                write_checkpoint(ckpt, output);
                ctx.out << "train: decoder " << ckpt.model.d_in << " -> " << ckpt.model.d_out
                        << ", best epoch " << ckpt.best_epoch << " -> " << output.string() << "\n";
            }};
}

Command add_encode(CLI::App& root, Context& ctx) {
    struct Flags {
        std::string checkpoint, input, output;
        std::size_t stop{};
    };
    auto f = std::make_shared<Flags>();
    auto* app = root.add_subcommand("encode", "Run a trained decoder over embeddings, optionally keeping a prefix");
    auto* ck = app->add_option("--checkpoint", f->checkpoint, "Decoder checkpoint (EMBD)");
    auto* in = app->add_option("-i,--input", f->input, "Input EMBF with d_in columns");
    auto* out = app->add_option("-o,--output", f->output, "Output EMBF");
    auto* stop = app->add_option("--stop", f->stop, "Keep the first STOP output columns (default: all)");
    return {app, [=, &ctx] {
                const auto cfg = ctx.config();
                const auto checkpoint = require_path(pick_path(ck, f->checkpoint, cfg.checkpoint), "--checkpoint");
                const auto input = require_path(
                    pick_path(in, f->input, cfg.inputs.empty() ? std::optional<fs::path>{} : cfg.inputs.front()),
                    "--input");
                const auto output = require_path(pick_path(out, f->output, cfg.output), "--output");
                check_input(checkpoint);
                check_input(input);
                check_output(output);
                const auto ckpt = read_checkpoint(checkpoint);
                if (stop->count() > 0 && (f->stop < 1 || f->stop > ckpt.model.d_out)) {
                    throw Error(ErrorCode::Validation, "stop " + std::to_string(f->stop) + " outside [1, " +
                                                           std::to_string(ckpt.model.d_out) + "]");
                }
                auto h = forward(ckpt.model, read_embeddings(input));
                if (stop->count() > 0) {
                    h = truncate(h, f->stop);
                }
                write_embeddings(h, output);
                ctx.out << "encode: " << h.rows() << " rows, " << h.dims() << " dims -> " << output.string()
                        << "\n";
            }};
}

Command add_calibrate(CLI::App& root, Context& ctx) {
    struct Flags {
        std::string input, output;
        unsigned bits{};
    };
    auto f = std::make_shared<Flags>();
    auto* app = root.add_subcommand("calibrate", "Compute per-dimension percentile break-points on a reference set");
    auto* in = app->add_option("-i,--input", f->input, "Reference embeddings (EMBF)");
    auto* out = app->add_option("-o,--output", f->output, "Calibration output (EMBC)");
    auto* bits = app->add_option("--bits", f->bits, "Bits per coordinate, 1..8 (default 8)");
    return {app, [=, &ctx] {
                const auto cfg = ctx.config();
                const auto input = require_path(
                    pick_path(in, f->input, cfg.inputs.empty() ? std::optional<fs::path>{} : cfg.inputs.front()),
                    "--input");
                const auto output = require_path(pick_path(out, f->output, cfg.calibration ? cfg.calibration : cfg.output),
                                                 "--output");
                check_input(input);
                check_output(output);
                const unsigned b = pick(bits, f->bits, cfg.bits, 8u);
                const auto cal = calibrate(read_embeddings(input), b);
                write_calibration(cal, output);
                ctx.out << "calibrate: " << cal.dims << " dims, " << cal.bits << " bits -> " << output.string()
                        << "\n";
            }};
}

Command add_quantize(CLI::App& root, Context& ctx) {
    struct Flags {
        std::string calibration, input, output;
    };
    auto f = std::make_shared<Flags>();
    auto* app = root.add_subcommand("quantize", "Map embeddings to b-bit codes with a calibration table");
    auto* cal_opt = app->add_option("--calibration", f->calibration, "Calibration table (EMBC)");
    auto* in = app->add_option("-i,--input", f->input, "Embeddings to quantize (EMBF)");
    auto* out = app->add_option("-o,--output", f->output, "Packed codes (EMBQ)");
    return {app, [=, &ctx] {
                const auto cfg = ctx.config();
                const auto cal_path = require_path(pick_path(cal_opt, f->calibration, cfg.calibration), "--calibration");
                const auto input = require_path(
                    pick_path(in, f->input, cfg.inputs.empty() ? std::optional<fs::path>{} : cfg.inputs.front()),
                    "--input");
                const auto output = require_path(pick_path(out, f->output, cfg.output), "--output");
                check_input(cal_path);
                check_input(input);
                check_output(output);
                const auto cal = read_calibration(cal_path);
                const auto codes = quantize(cal, read_embeddings(input));
                write_codes(codes, output);
                ctx.out << "quantize: " << codes.rows << " rows, " << codes.dims << " dims at " << codes.bits
                        << " bits -> " << output.string() << "\n";
            }};
}

Command add_dequantize(CLI::App& root, Context& ctx) {
    struct Flags {
        std::string calibration, input, output;
    };
    auto f = std::make_shared<Flags>();
    auto* app = root.add_subcommand("dequantize", "Map b-bit codes back to bucket representatives");
    auto* cal_opt = app->add_option("--calibration", f->calibration, "Calibration table (EMBC)");
    auto* in = app->add_option("-i,--input", f->input, "Packed codes (EMBQ)");
    auto* out = app->add_option("-o,--output", f->output, "Reconstructed embeddings (EMBF)");
    return {app, [=, &ctx] {
                const auto cfg = ctx.config();
                const auto cal_path = require_path(pick_path(cal_opt, f->calibration, cfg.calibration), "--calibration");
                const auto input = require_path(
                    pick_path(in, f->input, cfg.inputs.empty() ? std::optional<fs::path>{} : cfg.inputs.front()),
                    "--input");
                const auto output = require_path(pick_path(out, f->output, cfg.output), "--output");
                check_input(cal_path);
                check_input(input);
                check_output(output);
                const auto m = dequantize(read_calibration(cal_path), read_codes(input));
                write_embeddings(m, output);
                ctx.out << "dequantize: " << m.rows() << " rows, " << m.dims() << " dims -> " << output.string()
                        << "\n";
            }};
}

Command add_lsh(CLI::App& root, Context& ctx) {
    struct Flags {
        std::string input, output, projector;
        std::size_t dproj{};
        std::uint64_t seed{};
    };
    auto f = std::make_shared<Flags>();
    auto* app = root.add_subcommand("lsh", "Random-projection sign codes (1 bit per projected coordinate)");
    auto* in = app->add_option("-i,--input", f->input, "Embeddings (EMBF)");
    auto* out = app->add_option("-o,--output", f->output, "Sign codes (EMBQ, 1 bit)");
    auto* proj = app->add_option("--projector", f->projector, "Also write the projector descriptor (EMBL)");
    auto* dproj = app->add_option("--dproj", f->dproj, "Projected dimension / code bits (default 1024)");
    auto* seed = app->add_option("--seed", f->seed, "Projection seed (default 0)");
    return {app, [=, &ctx] {
                const auto cfg = ctx.config();
                const auto input = require_path(
                    pick_path(in, f->input, cfg.inputs.empty() ? std::optional<fs::path>{} : cfg.inputs.front()),
                    "--input");
                const auto output = require_path(pick_path(out, f->output, cfg.output), "--output");
                const auto projector_path = pick_path(proj, f->projector, cfg.projector);
                check_input(input);
                check_output(output);
                if (projector_path) {
                    check_output(*projector_path);
                }
                const std::size_t d_proj = pick(dproj, f->dproj, cfg.dproj, std::size_t{1024});
                const std::uint64_t s = pick(seed, f->seed, cfg.seed, std::uint64_t{0});
                const auto m = read_embeddings(input);
                const LshProjector projector(m.dims(), d_proj, s);
                const auto codes = project_and_binarize(projector, m);
                write_packed_codes(to_packed(codes), output);
                if (projector_path) {
                    write_projector(projector, *projector_path);
                }
                ctx.out << "lsh: " << m.dims() << " -> " << d_proj << " bits, compression "
                        << format_fixed(compression_factor(m.dims(), 32, d_proj), 1) << "x -> "
                        << output.string() << "\n";
            }};
}

Command add_eval(CLI::App& root, Context& ctx) {
    struct Flags {
        std::string queries, query_ids, docs, doc_ids, qrels, output, per_query, run, task, gains;
        std::vector<std::string> transforms;
        std::size_t k{};
    };
    auto f = std::make_shared<Flags>();
    auto* app = root.add_subcommand("eval", "Brute-force retrieval and nDCG@k under one or more transform chains");
    auto* q = app->add_option("--queries", f->queries, "Query embeddings (EMBF)");
    auto* qi = app->add_option("--query-ids", f->query_ids, "Query ids, one per line, in row order");
    auto* d = app->add_option("--docs", f->docs, "Document embeddings (EMBF)");
    auto* di = app->add_option("--doc-ids", f->doc_ids, "Document ids, one per line, in row order");
    auto* qr = app->add_option("--qrels", f->qrels, "Relevance judgments (TREC qrels)");
    auto* tr = app->add_option("--transform", f->transforms,
                               "Transform chain, repeatable: comma-separated stages from raw | truncate:K | "
                               "decoder:PATH[:STOP] | quantize:PATH | lsh:PATH | lsh:DPROJ:SEED (default raw)");
    auto* k = app->add_option("--k", f->k, "Cutoff (default 10)");
    auto* task = app->add_option("--task", f->task, "Task name for the report (default task)");
    auto* gains = app->add_option("--gains", f->gains, "linear or exponential (default linear)");
    auto* out = app->add_option("-o,--output", f->output, "Report TSV (default stdout)");
    app->add_option("--per-query", f->per_query, "Per-query nDCG TSV");
    app->add_option("--run", f->run, "TREC run file (single transform only)");
    return {app, [=, &ctx] {
                const auto cfg = ctx.config();
                const auto queries = require_path(pick_path(q, f->queries, cfg.queries), "--queries");
                const auto query_ids = require_path(pick_path(qi, f->query_ids, cfg.query_ids), "--query-ids");
                const auto docs = require_path(pick_path(d, f->docs, cfg.docs), "--docs");
                const auto doc_ids = require_path(pick_path(di, f->doc_ids, cfg.doc_ids), "--doc-ids");
                const auto qrels = require_path(pick_path(qr, f->qrels, cfg.qrels), "--qrels");
                const auto output = pick_path(out, f->output, cfg.output);
                for (const auto& p : {queries, query_ids, docs, doc_ids, qrels}) {
                    check_input(p);
                }
                for (const auto& p : {f->per_query, f->run}) {
                    if (!p.empty()) {
                        check_output(p);
                    }
                }
                if (output) {
                    check_output(*output);
                }
                std::vector<std::string> specs = f->transforms;
                if (tr->count() == 0) {
                    specs = {"raw"};
                }
                if (!f->run.empty() && specs.size() != 1) {
                    throw Error(ErrorCode::Validation, "--run needs exactly one --transform");
                }
                const auto gain_name = pick(gains, f->gains, cfg.gains, std::string("linear"));
                EvalOptions options;
                if (gain_name == "linear") {
                    options.gains = GainMode::Linear;
                } else if (gain_name == "exponential") {
                    options.gains = GainMode::Exponential;
                } else {
                    throw Error(ErrorCode::Validation, "unknown gain mode " + gain_name);
                }

                RetrievalTask t;
                t.name = pick(task, f->task, cfg.task, std::string("task"));
                t.k = pick(k, f->k, cfg.k, std::size_t{10});
                t.queries = read_embeddings(queries);
                t.query_ids = read_ids(query_ids);
                t.docs = read_embeddings(docs);
                t.doc_ids = read_ids(doc_ids);
                t.qrels = read_qrels(qrels);
                if (t.queries.dims() != t.docs.dims()) {
                    throw Error(ErrorCode::Dimension, "query dims " + std::to_string(t.queries.dims()) +
                                                          " differ from doc dims " + std::to_string(t.docs.dims()));
                }
                std::vector<TransformChain> chains;
                for (const auto& spec : specs) {
                    chains.push_back(parse_transform(spec, t.docs.dims()));
                }

                std::vector<EvalReport> reports;
                std::string per_query = "task\ttransform\tquery_id\tndcg\n";
                for (const auto& chain : chains) {
                    auto result = run_pipeline(t, chain, options);
                    const auto rows = format_per_query_tsv(result.report);
                    per_query += rows.substr(rows.find('\n') + 1);
                    if (!f->run.empty()) {
                        write_run(result.run, f->run);
                    }
                    reports.push_back(std::move(result.report));
                }
                const auto report = format_report_tsv(reports);
                if (output) {
                    write_text(report, *output);
                } else {
                    ctx.out << report;
                }
                if (!f->per_query.empty()) {
                    write_text(per_query, f->per_query);
                }
            }};
}

}  // namespace

int exit_code_for(ErrorCode code) {
    switch (code) {
    case ErrorCode::Io:
    case ErrorCode::Format:
    case ErrorCode::Corruption:
    case ErrorCode::UnsupportedDtype:
        return 3;
    case ErrorCode::NonFinite:
    case ErrorCode::UndefinedSimilarity:
    case ErrorCode::Normalization:
    case ErrorCode::TrainingDiverged:
        return 2;
    case ErrorCode::Parse:
    case ErrorCode::Validation:
    case ErrorCode::Dimension:
    case ErrorCode::BatchSize:
    case ErrorCode::CorpusTooSmall:
        return 1;
    }
    return 1;
}

TransformChain parse_transform(const std::string& spec, std::size_t input_dims) {
    TransformChain chain;
    std::size_t dims = input_dims;
    for (const auto& stage : split(spec, ',')) {
        const auto parts = split(stage, ':');
        const auto& kind = parts.empty() ? std::string() : parts.front();
        auto bad = [&](const std::string& why) {
            return Error(ErrorCode::Validation, "transform stage \"" + stage + "\": " + why);
        };
        if (kind == "raw" && parts.size() == 1) {
            chain.emplace_back(RawStage{});
        } else if (kind == "truncate" && parts.size() == 2) {
            const auto k = parse_count(parts[1], "truncate");
            if (k < 1 || k > dims) {
                throw bad("k must be in [1, " + std::to_string(dims) + "]");
            }
            chain.emplace_back(TruncateStage{k});
            dims = k;
        } else if (kind == "decoder" && parts.size() >= 2) {
            // decoder:PATH or decoder:PATH:STOP; the path itself may contain ':'.
            std::string path = stage.substr(kind.size() + 1);
            std::optional<std::size_t> stop;
            if (const auto colon = path.rfind(':'); colon != std::string::npos) {
                const auto tail = path.substr(colon + 1);
                if (!tail.empty() && tail.find_first_not_of("0123456789") == std::string::npos) {
                    stop = parse_count(tail, "decoder stop");
                    path = path.substr(0, colon);
                }
            }
            check_input(path);
            auto ckpt = read_checkpoint(path);
            if (ckpt.model.d_in != dims) {
                throw bad("decoder expects " + std::to_string(ckpt.model.d_in) + " dims, stage input has " +
                          std::to_string(dims));
            }
            if (stop && (*stop < 1 || *stop > ckpt.model.d_out)) {
                throw bad("stop must be in [1, " + std::to_string(ckpt.model.d_out) + "]");
            }
            dims = stop.value_or(ckpt.model.d_out);
            chain.emplace_back(DecoderStage{std::make_shared<DecoderModel>(std::move(ckpt.model)), stop});
        } else if (kind == "quantize" && parts.size() >= 2) {
            const std::string path = stage.substr(kind.size() + 1);
            check_input(path);
            auto cal = read_calibration(path);
            if (cal.dims != dims) {
                throw bad("calibration covers " + std::to_string(cal.dims) + " dims, stage input has " +
                          std::to_string(dims));
            }
            chain.emplace_back(QuantizeStage{std::make_shared<QuantizerCalibration>(std::move(cal))});
        } else if (kind == "lsh" && parts.size() == 3 &&
                   parts[1].find_first_not_of("0123456789") == std::string::npos) {
            const auto d_proj = parse_count(parts[1], "lsh dproj");
            const auto seed = parse_count(parts[2], "lsh seed");
            chain.emplace_back(LshStage{std::make_shared<LshProjector>(dims, d_proj, seed)});
        } else if (kind == "lsh" && parts.size() >= 2) {
            const std::string path = stage.substr(kind.size() + 1);
            check_input(path);
            auto projector = read_projector(path);
            if (projector.d_in() != dims) {
                throw bad("projector expects " + std::to_string(projector.d_in()) + " dims, stage input has " +
                          std::to_string(dims));
            }
            chain.emplace_back(LshStage{std::make_shared<LshProjector>(std::move(projector))});
        } else {
            throw bad("unrecognized stage");
        }
    }
    if (chain.empty()) {
        throw Error(ErrorCode::Validation, "empty transform chain");
    }
    for (std::size_t i = 0; i + 1 < chain.size(); ++i) {
        if (std::holds_alternative<LshStage>(chain[i])) {
            throw Error(ErrorCode::Validation, "lsh must be the last stage of a transform chain");
        }
    }
    return chain;
}

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    CLI::App app{"embfuse: concatenate, compress, quantize and evaluate embedding spaces", "embfuse"};
    app.require_subcommand(1);
    Context ctx{out, err, {}, nullptr};
    ctx.config_opt = app.add_option("--config", ctx.config_path,
                                    "Pipeline config (key = value lines); flags override it")
                         ->configurable(false);
    std::vector<Command> commands{add_concat(app, ctx),   add_train(app, ctx),    add_encode(app, ctx),
                                  add_calibrate(app, ctx), add_quantize(app, ctx), add_dequantize(app, ctx),
                                  add_lsh(app, ctx),      add_eval(app, ctx)};
    for (auto& c : commands) {
        // Accept --config after the subcommand name too.
        c.app->fallthrough();
    }

    std::vector<const char*> argv;
    argv.reserve(args.size() + 1);
    for (const auto& a : args) {
        argv.push_back(a.c_str());
    }
    try {
        app.parse(static_cast<int>(argv.size()), argv.data());
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e, out, err);
        return code == 0 ? 0 : 1;
    }

    try {
        for (auto& c : commands) {
            if (c.app->parsed()) {
                c.run();
            }
        }
    } catch (const Error& e) {
        err << "error: " << e.what() << "\n";
        return exit_code_for(e.code());
    } catch (const std::exception& e) {
        err << "error: " << e.what() << "\n";
        return 3;
    }
    return 0;
}

}  // namespace embfuse::cli
