#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "deepcae/matrix.hpp"
#include "deepcae/penalty.hpp"
#include "deepcae/tape.hpp"

namespace deepcae {

enum class Variant { standard, deepcae, stacked_cae };

std::string_view to_string(Variant v);
/// Accepts "standard", "deepcae", "stacked" and "stacked_cae". Throws ConfigError.
Variant parse_variant(std::string_view name);

/// Smallest positive contractive weight; positive values below it are raised to it.
inline constexpr double kLambdaFloor = 1e-8;

/// Weight the penalty actually receives: 0 for the standard variant and for an
/// explicit 0 (penalty disabled); positive values are floored at kLambdaFloor.
double effective_lambda(Variant variant, double lambda);

/// Rounds x >= 0 to the nearest integer, ties upward.
std::size_t round_half_up(double x);

struct EncoderSpec {
    std::size_t input_dim = 1;
    std::size_t embedding_dim = 1;
    std::size_t num_layers = 1;
    double compression_rate = 0.5;

    /// embedding_dim = round(input_dim * rate), at least 1.
    static EncoderSpec from_rate(std::size_t input_dim, double compression_rate, std::size_t num_layers);

    /// Encoder widths from input to embedding. Hidden widths interpolate
    /// linearly; with two layers the hidden width is round((d_x + d_h) / 2).
    std::vector<std::size_t> widths() const;

    void validate() const;

    bool operator==(const EncoderSpec&) const = default;
};

struct LayerParams {
    Matrix weight;  // out x in
    Matrix bias;    // 1 x out

    bool operator==(const LayerParams&) const = default;
};

struct AutoencoderModel {
    EncoderSpec spec;
    Variant variant = Variant::standard;
    double lambda = 0.0;
    std::vector<LayerParams> encoder;
    std::vector<LayerParams> decoder;

    std::vector<Matrix> encoder_weights() const;
    double penalty_weight() const { return effective_lambda(variant, lambda); }
    /// Encoder then decoder, weight before bias per layer.
    std::vector<Matrix*> parameters();
    std::vector<const Matrix*> parameters() const;

    bool operator==(const AutoencoderModel&) const = default;
};

/// Xavier-uniform weights (bound sqrt(6 / (in + out))), zero biases.
/// The draw depends only on the widths and the seed, not on the variant.
AutoencoderModel init_model(const EncoderSpec& spec, Variant variant, double lambda, std::uint64_t seed);

struct Encoded {
    Matrix embedding;
    ForwardTrace trace;
};

Encoded encode(const AutoencoderModel& model, const Matrix& x);
Matrix decode(const AutoencoderModel& model, const Matrix& z);
Matrix reconstruct(const AutoencoderModel& model, const Matrix& x);

/// Model parameters registered on a tape, in AutoencoderModel::parameters() order.
struct BoundModel {
    std::vector<VarRef> encoder_weights, encoder_biases, decoder_weights, decoder_biases;
    std::vector<VarRef> parameters() const;
};

BoundModel bind(Tape& tape, const AutoencoderModel& model);

struct LossNodes {
    VarRef total;
    VarRef recon;
    /// Unweighted penalty, a constant 0 when the penalty weight is 0.
    VarRef penalty;
};

/// total = mse(x, decode(encode(x))) + lambda * penalty, all on the tape.
LossNodes record_loss(Tape& tape, const AutoencoderModel& model, const BoundModel& bound, const Matrix& x,
                      Exec exec = Exec::parallel);

struct LossValue {
    double total = 0.0;
    double recon = 0.0;
    double penalty = 0.0;
};

LossValue loss(const AutoencoderModel& model, const Matrix& x);

/// Mean squared error of the round trip, without building a tape.
double reconstruction_mse(const AutoencoderModel& model, const Matrix& x);

/// Versioned JSON container: spec, variant, lambda and every layer matrix
/// with its declared shape.
std::string serialize_model(const AutoencoderModel& model);
AutoencoderModel deserialize_model(const std::string& text);
void save_model(const AutoencoderModel& model, const std::filesystem::path& path);
AutoencoderModel load_model(const std::filesystem::path& path);

inline constexpr int kModelFormatVersion = 1;

}  // namespace deepcae
