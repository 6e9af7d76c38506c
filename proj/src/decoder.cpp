#include "embfuse/decoder.hpp"

#include "binary_io.hpp"
#include "embfuse/error.hpp"
#include "embfuse/linalg.hpp"
#include "embfuse/rng.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <string>

namespace embfuse {

namespace {

constexpr std::string_view kCheckpointMagic = "EMBD";
constexpr std::uint32_t kCheckpointVersion = 1;
constexpr std::uint32_t kFlagTanh = 1u << 0;
constexpr std::uint32_t kFlagNormalize = 1u << 1;

void require_batch(std::size_t h_rows, std::size_t z_rows) {
    if (h_rows != z_rows) {
        throw Error(ErrorCode::Dimension, "output batch has " + std::to_string(h_rows) +
                                              " rows but target batch has " + std::to_string(z_rows));
    }
    if (h_rows < 2) {
        throw Error(ErrorCode::BatchSize,
                    "similarity loss needs a batch of at least 2 rows, got " + std::to_string(h_rows));
    }
}

// Shared by sim_loss, mrl_loss and mrl_loss_grad so all three produce identical bits.
double loss_from_cosines(const MatrixD& output_cos, const MatrixD& target_cos) {
    const std::size_t b = output_cos.rows();
    double sum = 0.0;
    for (std::size_t i = 0; i < b; ++i) {
        for (std::size_t j = 0; j < b; ++j) {
            if (i != j) {
                const double diff = output_cos(i, j) - target_cos(i, j);
                sum += diff * diff;
            }
        }
    }
    return sum / static_cast<double>(b * (b - 1));
}

template <typename T>
MatrixD prepare_inputs(const DecoderModel& model, const Matrix<T>& z) {
    if (z.dims() != model.d_in) {
        throw Error(ErrorCode::Dimension, "decoder expects " + std::to_string(model.d_in) +
                                              "-d input, got " + std::to_string(z.dims()));
    }
    auto x = matrix_cast<double>(z);
    if (model.normalize_inputs) {
        x = l2_normalize_rows(x);
    }
    return x;
}

MatrixD affine(const DecoderModel& model, const MatrixD& x) {
    MatrixD h = matmul_nt(x, model.weights);
    for (std::size_t i = 0; i < h.rows(); ++i) {
        auto row = h.row(i);
        for (std::size_t k = 0; k < model.d_out; ++k) {
            row[k] += model.bias[k];
            if (model.activation == Activation::Tanh) {
                row[k] = std::tanh(row[k]);
            }
        }
    }
    return h;
}

bool params_finite(const DecoderModel& model) {
    return all_finite<double>(model.weights.data()) &&
           all_finite<double>(std::span<const double>(model.bias));
}

}  // namespace

void validate_stops(const std::vector<std::size_t>& stops, std::size_t d_out) {
    if (stops.empty()) {
        throw Error(ErrorCode::Validation, "stop list is empty");
    }
    for (std::size_t i = 0; i < stops.size(); ++i) {
        if (stops[i] < 1 || (i > 0 && stops[i] <= stops[i - 1])) {
            throw Error(ErrorCode::Validation, "stops must be positive and strictly increasing");
        }
    }
    if (stops.back() != d_out) {
        throw Error(ErrorCode::Validation, "last stop " + std::to_string(stops.back()) +
                                               " must equal output dimension " + std::to_string(d_out));
    }
}

void validate_model(const DecoderModel& model) {
    if (model.d_in < 1 || model.d_out < 1) {
        throw Error(ErrorCode::Validation, "decoder dimensions must be positive");
    }
    if (model.weights.rows() != model.d_out || model.weights.dims() != model.d_in ||
        model.bias.size() != model.d_out) {
        throw Error(ErrorCode::Dimension, "decoder parameter shapes do not match d_in/d_out");
    }
    validate_stops(model.stops, model.d_out);
    if (!params_finite(model)) {
        throw Error(ErrorCode::NonFinite, "decoder parameters are not finite");
    }
}

DecoderModel make_decoder(std::size_t d_in, std::size_t d_out, std::vector<std::size_t> stops) {
    DecoderModel model;
    model.d_in = d_in;
    model.d_out = d_out;
    model.weights = MatrixD(d_out, d_in);
    model.bias.assign(d_out, 0.0);
    model.stops = std::move(stops);
    validate_model(model);
    return model;
}

void init_uniform(DecoderModel& model, std::uint64_t seed) {
    Rng rng(seed);
    const double limit = 1.0 / std::sqrt(static_cast<double>(model.d_in));
    for (auto& w : model.weights.data()) {
        w = rng.uniform(-limit, limit);
    }
    std::fill(model.bias.begin(), model.bias.end(), 0.0);
}

template <typename T>
MatrixD forward_exact(const DecoderModel& model, const Matrix<T>& z) {
    return affine(model, prepare_inputs(model, z));
}

EmbeddingMatrix forward(const DecoderModel& model, const EmbeddingMatrix& z) {
    return matrix_cast<float>(forward_exact(model, z));
}

template <typename H, typename Z>
double sim_loss(const Matrix<H>& h_batch, const Matrix<Z>& z_batch) {
    require_batch(h_batch.rows(), z_batch.rows());
    return loss_from_cosines(pairwise_cosine(h_batch), pairwise_cosine(z_batch));
}

template <typename T>
double mrl_loss(const DecoderModel& model, const Matrix<T>& z_batch) {
    require_batch(z_batch.rows(), z_batch.rows());
    const MatrixD h = forward_exact(model, z_batch);
    const MatrixD target = pairwise_cosine(z_batch);
    double sum = 0.0;
    for (std::size_t stop : model.stops) {
        sum += loss_from_cosines(pairwise_cosine(truncate(h, stop)), target);
    }
    return sum / static_cast<double>(model.stops.size());
}

template <typename T>
LossGradient mrl_loss_grad(const DecoderModel& model, const Matrix<T>& z_batch) {
    require_batch(z_batch.rows(), z_batch.rows());
    const std::size_t b = z_batch.rows();
    const MatrixD x = prepare_inputs(model, z_batch);
    const MatrixD h = affine(model, x);
    const MatrixD target = pairwise_cosine(z_batch);
    const double stop_weight = 1.0 / static_cast<double>(model.stops.size());
    const double pair_scale = 4.0 / static_cast<double>(b * (b - 1));

    // dL/dh, accumulated over stops on each prefix.
    MatrixD grad_h(b, model.d_out);
    std::vector<double> norms(b);
    MatrixD unit;
    double loss_sum = 0.0;
    for (std::size_t stop : model.stops) {
        const MatrixD prefix = truncate(h, stop);
        const MatrixD cos = pairwise_cosine(prefix);
        loss_sum += loss_from_cosines(cos, target);

        unit = MatrixD(b, stop);
        for (std::size_t i = 0; i < b; ++i) {
            norms[i] = l2_norm(prefix.row(i));
            for (std::size_t k = 0; k < stop; ++k) {
                unit(i, k) = prefix(i, k) / norms[i];
            }
        }
        // d cos(h_i, h_j) / d h_i = (u_j - cos_ij u_i) / |h_i|; both ordered pairs
        // (i, j) and (j, i) contribute, hence the factor 4 in pair_scale.
        for (std::size_t i = 0; i < b; ++i) {
            auto gi = grad_h.row(i);
            double self_coef = 0.0;
            const double scale = stop_weight * pair_scale / norms[i];
            for (std::size_t j = 0; j < b; ++j) {
                if (j == i) {
                    continue;
                }
                const double residual = cos(i, j) - target(i, j);
                self_coef += residual * cos(i, j);
                const auto uj = unit.row(j);
                const double coef = scale * residual;
                for (std::size_t k = 0; k < stop; ++k) {
                    gi[k] += coef * uj[k];
                }
            }
            const auto ui = unit.row(i);
            for (std::size_t k = 0; k < stop; ++k) {
                gi[k] -= scale * self_coef * ui[k];
            }
        }
    }

    if (model.activation == Activation::Tanh) {
        for (std::size_t i = 0; i < b; ++i) {
            for (std::size_t k = 0; k < model.d_out; ++k) {
                grad_h(i, k) *= 1.0 - h(i, k) * h(i, k);
            }
        }
    }

    LossGradient out;
    out.loss = loss_sum / static_cast<double>(model.stops.size());
    out.grad_weights = matmul_tn(grad_h, x);
    out.grad_bias.assign(model.d_out, 0.0);
    for (std::size_t i = 0; i < b; ++i) {
        for (std::size_t k = 0; k < model.d_out; ++k) {
            out.grad_bias[k] += grad_h(i, k);
        }
    }
    return out;
}

void validate_train_config(const TrainConfig& config) {
    if (config.batch_size < 2) {
        throw Error(ErrorCode::Validation, "batch size must be at least 2");
    }
    if (!(config.learning_rate > 0.0) || !std::isfinite(config.learning_rate)) {
        throw Error(ErrorCode::Validation, "learning rate must be positive");
    }
    if (!(config.validation_fraction >= 0.0 && config.validation_fraction < 1.0)) {
        throw Error(ErrorCode::Validation, "validation fraction must be in [0, 1)");
    }
    if (config.epochs < 1) {
        throw Error(ErrorCode::Validation, "epochs must be at least 1");
    }
    if (!(config.divergence_factor > 1.0)) {
        throw Error(ErrorCode::Validation, "divergence factor must exceed 1");
    }
    if (config.d_out < 1) {
        throw Error(ErrorCode::Validation, "output dimension must be positive");
    }
    const auto& opt = config.optimizer;
    if (opt.kind == OptimizerKind::Adam &&
        !(opt.beta1 >= 0.0 && opt.beta1 < 1.0 && opt.beta2 >= 0.0 && opt.beta2 < 1.0 && opt.epsilon > 0.0)) {
        throw Error(ErrorCode::Validation, "adam requires beta1, beta2 in [0, 1) and epsilon > 0");
    }
    if (opt.kind == OptimizerKind::Sgd && !(opt.momentum >= 0.0 && opt.momentum < 1.0)) {
        throw Error(ErrorCode::Validation, "sgd momentum must be in [0, 1)");
    }
}

namespace {

class Optimizer {
public:
    Optimizer(const OptimizerConfig& config, double learning_rate, std::size_t size)
        : config_{config}, lr_{learning_rate}, first_(size, 0.0), second_(size, 0.0) {}

    void step(std::span<double> params, std::span<const double> grads, std::size_t offset) {
        if (offset == 0) {
            ++t_;
        }
        for (std::size_t i = 0; i < params.size(); ++i) {
            const double g = grads[i];
            double& m = first_[offset + i];
            if (config_.kind == OptimizerKind::Adam) {
                double& v = second_[offset + i];
                m = config_.beta1 * m + (1.0 - config_.beta1) * g;
                v = config_.beta2 * v + (1.0 - config_.beta2) * g * g;
                const double m_hat = m / (1.0 - std::pow(config_.beta1, static_cast<double>(t_)));
                const double v_hat = v / (1.0 - std::pow(config_.beta2, static_cast<double>(t_)));
                params[i] -= lr_ * m_hat / (std::sqrt(v_hat) + config_.epsilon);
            } else {
                m = config_.momentum * m + g;
                params[i] -= lr_ * m;
            }
        }
    }

private:
    OptimizerConfig config_;
    double lr_;
    std::vector<double> first_;
    std::vector<double> second_;
    std::size_t t_{0};
};

EmbeddingMatrix gather(const EmbeddingMatrix& corpus, std::span<const std::size_t> indices) {
    EmbeddingMatrix out(indices.size(), corpus.dims());
    for (std::size_t r = 0; r < indices.size(); ++r) {
        const auto src = corpus.row(indices[r]);
        std::copy(src.begin(), src.end(), out.row(r).begin());
    }
    return out;
}

// Consecutive chunks of batch_size; a trailing chunk with fewer than 2 rows is dropped.
std::vector<std::span<const std::size_t>> batches_of(std::span<const std::size_t> indices,
                                                     std::size_t batch_size) {
    std::vector<std::span<const std::size_t>> out;
    for (std::size_t start = 0; start < indices.size(); start += batch_size) {
        const std::size_t len = std::min(batch_size, indices.size() - start);
        if (len >= 2) {
            out.push_back(indices.subspan(start, len));
        }
    }
    return out;
}

[[noreturn]] void diverged(std::size_t epoch, const std::string& why) {
    throw Error(ErrorCode::TrainingDiverged,
                "training diverged at epoch " + std::to_string(epoch) + ": " + why);
}

}  // namespace

Checkpoint train(const EmbeddingMatrix& corpus, const TrainConfig& config,
                 const std::vector<std::size_t>& stops) {
    validate_train_config(config);
    validate_stops(stops, config.d_out);
    require_finite(corpus, "training corpus");
    if (corpus.dims() < 1) {
        throw Error(ErrorCode::Dimension, "training corpus has no dimensions");
    }
    if (corpus.rows() < 2 * config.batch_size) {
        throw Error(ErrorCode::CorpusTooSmall, "corpus has " + std::to_string(corpus.rows()) +
                                                   " rows; training needs at least 2 x batch size = " +
                                                   std::to_string(2 * config.batch_size));
    }

    Rng rng(config.seed);
    DecoderModel model = make_decoder(corpus.dims(), config.d_out, stops);
    model.activation = config.activation;
    model.normalize_inputs = config.normalize_inputs;
    init_uniform(model, rng.next_u64());

    std::vector<std::size_t> order(corpus.rows());
    std::iota(order.begin(), order.end(), std::size_t{0});
    rng.shuffle(std::span<std::size_t>(order));
    const auto val_rows = static_cast<std::size_t>(
        std::floor(config.validation_fraction * static_cast<double>(corpus.rows())));
    if (config.validation_fraction > 0.0 && val_rows < 2) {
        throw Error(ErrorCode::CorpusTooSmall, "validation split holds fewer than 2 rows");
    }
    std::vector<std::size_t> val_idx(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(val_rows));
    std::vector<std::size_t> train_idx(order.begin() + static_cast<std::ptrdiff_t>(val_rows), order.end());
    std::sort(val_idx.begin(), val_idx.end());
    if (train_idx.size() < 2) {
        throw Error(ErrorCode::CorpusTooSmall, "training split holds fewer than 2 rows");
    }

    std::vector<EmbeddingMatrix> val_batches;
    for (auto chunk : batches_of(val_idx, config.batch_size)) {
        val_batches.push_back(gather(corpus, chunk));
    }

    const std::size_t n_weights = model.weights.data().size();
    Optimizer optimizer(config.optimizer, config.learning_rate, n_weights + model.d_out);

    Checkpoint result;
    DecoderModel best = model;
    double best_val = std::numeric_limits<double>::infinity();

    double initial_loss = 0.0;
    {
        const auto chunks = batches_of(train_idx, config.batch_size);
        for (auto chunk : chunks) {
            initial_loss += mrl_loss(model, gather(corpus, chunk));
        }
        initial_loss /= static_cast<double>(chunks.size());
    }

    for (std::size_t epoch = 1; epoch <= config.epochs; ++epoch) {
        rng.shuffle(std::span<std::size_t>(train_idx));
        double loss_sum = 0.0;
        std::size_t n_batches = 0;
        for (auto chunk : batches_of(train_idx, config.batch_size)) {
            const auto batch = gather(corpus, chunk);
            LossGradient lg;
            try {
                lg = mrl_loss_grad(model, batch);
            } catch (const Error& e) {
                if (e.code() == ErrorCode::UndefinedSimilarity && epoch > 1) {
                    diverged(epoch, e.what());
                }
                throw;
            }
            if (!std::isfinite(lg.loss) || !all_finite<double>(lg.grad_weights.data()) ||
                !all_finite<double>(std::span<const double>(lg.grad_bias))) {
                diverged(epoch, "non-finite loss or gradient");
            }
            optimizer.step(model.weights.data(), lg.grad_weights.data(), 0);
            optimizer.step(model.bias, lg.grad_bias, n_weights);
            loss_sum += lg.loss;
            ++n_batches;
        }
        if (!params_finite(model)) {
            diverged(epoch, "non-finite parameters");
        }

        EpochRecord record{epoch, loss_sum / static_cast<double>(n_batches), std::nullopt};
        if (initial_loss > 0.0 && record.train_loss > config.divergence_factor * initial_loss) {
            diverged(epoch, "mean loss " + std::to_string(record.train_loss) + " exceeds " +
                                std::to_string(config.divergence_factor) + "x the initial loss " +
                                std::to_string(initial_loss));
        }
        result.train_loss_history.push_back(record.train_loss);

        if (!val_batches.empty()) {
            double val_sum = 0.0;
            for (const auto& batch : val_batches) {
                try {
                    val_sum += mrl_loss(model, batch);
                } catch (const Error& e) {
                    if (e.code() == ErrorCode::UndefinedSimilarity) {
                        diverged(epoch, e.what());
                    }
                    throw;
                }
            }
            const double val_loss = val_sum / static_cast<double>(val_batches.size());
            if (!std::isfinite(val_loss)) {
                diverged(epoch, "non-finite validation loss");
            }
            record.val_loss = val_loss;
            result.val_loss_history.push_back(val_loss);
            if (val_loss < best_val) {
                best_val = val_loss;
                best = model;
                result.best_epoch = epoch;
            }
        }
        if (config.on_epoch) {
            config.on_epoch(record);
        }
    }

    if (val_batches.empty()) {
        best = model;
        result.best_epoch = config.epochs;
    }
    result.model = std::move(best);
    return result;
}

void write_checkpoint(const Checkpoint& checkpoint, const std::filesystem::path& path) {
    const auto& model = checkpoint.model;
    validate_model(model);
    detail::ByteWriter out;
    out.bytes(kCheckpointMagic);
    out.u32(kCheckpointVersion);
    std::uint32_t flags = 0;
    if (model.activation == Activation::Tanh) {
        flags |= kFlagTanh;
    }
    if (model.normalize_inputs) {
        flags |= kFlagNormalize;
    }
    out.u32(flags);
    out.u32(static_cast<std::uint32_t>(model.d_in));
    out.u32(static_cast<std::uint32_t>(model.d_out));
    out.u32(static_cast<std::uint32_t>(model.stops.size()));
    for (auto s : model.stops) {
        out.u32(static_cast<std::uint32_t>(s));
    }
    for (double w : model.weights.data()) {
        out.f64(w);
    }
    for (double b : model.bias) {
        out.f64(b);
    }
    out.u32(static_cast<std::uint32_t>(checkpoint.best_epoch));
    out.u32(static_cast<std::uint32_t>(checkpoint.train_loss_history.size()));
    for (double v : checkpoint.train_loss_history) {
        out.f64(v);
    }
    out.u32(static_cast<std::uint32_t>(checkpoint.val_loss_history.size()));
    for (double v : checkpoint.val_loss_history) {
        out.f64(v);
    }
    detail::dump(out.buffer(), path);
}

Checkpoint read_checkpoint(const std::filesystem::path& path) {
    const auto data = detail::slurp(path);
    const auto context = path.string();
    detail::ByteReader in(data, context);
    detail::expect_magic(in, kCheckpointMagic, context);
    const auto version = in.u32();
    if (version != kCheckpointVersion) {
        throw Error(ErrorCode::Format, context + ": unsupported EMBD version " + std::to_string(version));
    }
    const auto flags = in.u32();
    if ((flags & ~(kFlagTanh | kFlagNormalize)) != 0) {
        throw Error(ErrorCode::Format, context + ": unknown checkpoint flags");
    }
    Checkpoint ckpt;
    auto& model = ckpt.model;
    model.activation = (flags & kFlagTanh) ? Activation::Tanh : Activation::None;
    model.normalize_inputs = (flags & kFlagNormalize) != 0;
    model.d_in = in.u32();
    model.d_out = in.u32();
    const auto n_stops = in.u32();
    if (static_cast<std::size_t>(n_stops) * 4 > in.remaining()) {
        in.corrupt("stop list exceeds file size");
    }
    for (std::uint32_t i = 0; i < n_stops; ++i) {
        model.stops.push_back(in.u32());
    }
    const std::uint64_t n_weights = static_cast<std::uint64_t>(model.d_in) * model.d_out;
    if ((n_weights + model.d_out) * 8 > in.remaining()) {
        in.corrupt("parameter block exceeds file size");
    }
    std::vector<double> weights(n_weights);
    for (auto& w : weights) {
        w = in.f64();
    }
    model.weights = MatrixD(model.d_out, model.d_in, std::move(weights));
    model.bias.resize(model.d_out);
    for (auto& b : model.bias) {
        b = in.f64();
    }
    ckpt.best_epoch = in.u32();
    auto read_history = [&](std::vector<double>& history) {
        const auto n = in.u32();
        if (static_cast<std::size_t>(n) * 8 > in.remaining()) {
            in.corrupt("loss history exceeds file size");
        }
        history.resize(n);
        for (auto& v : history) {
            v = in.f64();
        }
    };
    read_history(ckpt.train_loss_history);
    read_history(ckpt.val_loss_history);
    if (in.remaining() != 0) {
        in.corrupt(std::to_string(in.remaining()) + " trailing bytes");
    }
    try {
        validate_model(model);
    } catch (const Error& e) {
        throw Error(ErrorCode::Format, context + ": " + e.what());
    }
    return ckpt;
}

template MatrixD forward_exact(const DecoderModel&, const Matrix<float>&);
template MatrixD forward_exact(const DecoderModel&, const Matrix<double>&);
template double sim_loss(const Matrix<float>&, const Matrix<float>&);
template double sim_loss(const Matrix<double>&, const Matrix<double>&);
template double sim_loss(const Matrix<double>&, const Matrix<float>&);
template double sim_loss(const Matrix<float>&, const Matrix<double>&);
template double mrl_loss(const DecoderModel&, const Matrix<float>&);
template double mrl_loss(const DecoderModel&, const Matrix<double>&);
template LossGradient mrl_loss_grad(const DecoderModel&, const Matrix<float>&);
template LossGradient mrl_loss_grad(const DecoderModel&, const Matrix<double>&);

}  // namespace embfuse
