#pragma once

#include "embfuse/matrix.hpp"

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <vector>

namespace embfuse {

enum class Activation : std::uint8_t { None = 0, Tanh = 1 };

/// Default Matryoshka stops for a 768-d decoder.
inline const std::vector<std::size_t> kDefaultStops{32, 64, 128, 200, 256, 300, 384, 512, 768};

/// Single-layer decoder h(z) = act(W z + b) with nested output prefixes.
struct DecoderModel {
    std::size_t d_in{0};
    std::size_t d_out{0};
    MatrixD weights;            // d_out x d_in
    std::vector<double> bias;   // d_out
    std::vector<std::size_t> stops;
    Activation activation{Activation::None};
    /// Rows of the input are L2-normalized before the affine map.
    bool normalize_inputs{false};

    bool operator==(const DecoderModel&) const = default;
};

/// Throws Validation if stops are empty, not strictly increasing, or do not end at d_out.
void validate_stops(const std::vector<std::size_t>& stops, std::size_t d_out);
void validate_model(const DecoderModel& model);

/// Zero-initialized model; use init_uniform for training.
DecoderModel make_decoder(std::size_t d_in, std::size_t d_out, std::vector<std::size_t> stops);
/// Weights ~ U(-1/sqrt(d_in), 1/sqrt(d_in)), bias 0.
void init_uniform(DecoderModel& model, std::uint64_t seed);

/// Full-precision forward pass, B x d_out.
template <typename T>
MatrixD forward_exact(const DecoderModel& model, const Matrix<T>& z);
/// Forward pass rounded to 32-bit storage.
EmbeddingMatrix forward(const DecoderModel& model, const EmbeddingMatrix& z);

/// Mean over ordered pairs i != j of (cos(h_i, h_j) - cos(z_i, z_j))^2.
template <typename H, typename Z>
double sim_loss(const Matrix<H>& h_batch, const Matrix<Z>& z_batch);

/// Mean of sim_loss over the model's stops, each on the truncated output against full z.
template <typename T>
double mrl_loss(const DecoderModel& model, const Matrix<T>& z_batch);

struct LossGradient {
    double loss{0.0};
    MatrixD grad_weights;  // d_out x d_in
    std::vector<double> grad_bias;
};

/// Loss identical to mrl_loss plus its exact gradient w.r.t. weights and bias.
template <typename T>
LossGradient mrl_loss_grad(const DecoderModel& model, const Matrix<T>& z_batch);

enum class OptimizerKind { Adam, Sgd };

struct OptimizerConfig {
    OptimizerKind kind{OptimizerKind::Adam};
    double beta1{0.9};
    double beta2{0.999};
    double epsilon{1e-8};
    double momentum{0.0};  // sgd only
};

struct EpochRecord {
    std::size_t epoch{0};  // 1-based
    double train_loss{0.0};
    std::optional<double> val_loss;
};

struct TrainConfig {
    std::size_t batch_size{256};
    std::size_t epochs{100};
    double learning_rate{1e-3};
    OptimizerConfig optimizer{};
    std::uint64_t seed{0};
    double validation_fraction{0.05};
    bool normalize_inputs{true};
    Activation activation{Activation::None};
    std::size_t d_out{768};
    /// An epoch whose mean training loss exceeds this multiple of the loss at
    /// initialization is reported as divergence. Non-finite values always are.
    double divergence_factor{2.0};
    std::function<void(const EpochRecord&)> on_epoch;
};

void validate_train_config(const TrainConfig& config);

struct Checkpoint {
    DecoderModel model;
    std::vector<double> train_loss_history;
    std::vector<double> val_loss_history;  // empty without a validation split
    std::size_t best_epoch{0};             // 1-based epoch whose parameters are kept

    bool operator==(const Checkpoint&) const = default;
};

/// Deterministic given config.seed. Throws CorpusTooSmall, TrainingDiverged.
Checkpoint train(const EmbeddingMatrix& corpus, const TrainConfig& config,
                 const std::vector<std::size_t>& stops);

void write_checkpoint(const Checkpoint& checkpoint, const std::filesystem::path& path);
Checkpoint read_checkpoint(const std::filesystem::path& path);

}  // namespace embfuse
