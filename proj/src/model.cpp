#include "deepcae/model.hpp"

#include <cmath>

#include "deepcae/errors.hpp"
#include "deepcae/io.hpp"
#include "deepcae/kernels.hpp"
#include "deepcae/random.hpp"
#include "json.hpp"

namespace deepcae {

using nlohmann::json;

std::string_view to_string(Variant v) {
    switch (v) {
    case Variant::standard: return "standard";
    case Variant::deepcae: return "deepcae";
    case Variant::stacked_cae: return "stacked";
    }
    return "?";
}

Variant parse_variant(std::string_view name) {
    if (name == "standard") return Variant::standard;
    if (name == "deepcae") return Variant::deepcae;
    if (name == "stacked" || name == "stacked_cae") return Variant::stacked_cae;
    throw ConfigError("unknown model variant '" + std::string(name) + "'");
}

double effective_lambda(Variant variant, double lambda) {
    if (!(lambda >= 0.0) || !std::isfinite(lambda)) throw ConfigError("lambda must be finite and >= 0");
    if (variant == Variant::standard || lambda == 0.0) return 0.0;
    return std::max(lambda, kLambdaFloor);
}

std::size_t round_half_up(double x) { return static_cast<std::size_t>(std::floor(x + 0.5)); }

EncoderSpec EncoderSpec::from_rate(std::size_t input_dim, double compression_rate, std::size_t num_layers) {
    EncoderSpec s;
    s.input_dim = input_dim;
    s.compression_rate = compression_rate;
    s.num_layers = num_layers;
    s.embedding_dim = std::max<std::size_t>(1, round_half_up(static_cast<double>(input_dim) * compression_rate));
    s.validate();
    return s;
}

void EncoderSpec::validate() const {
    if (input_dim < 1) throw ConfigError("input dimension must be >= 1");
    if (embedding_dim < 1) throw ConfigError("embedding dimension must be >= 1");
    if (embedding_dim > input_dim) throw ConfigError("embedding dimension exceeds input dimension");
    if (num_layers < 1) throw ConfigError("encoder needs at least one layer");
    if (!(compression_rate > 0.0 && compression_rate <= 1.0)) throw ConfigError("compression rate must be in (0, 1]");
}

std::vector<std::size_t> EncoderSpec::widths() const {
    std::vector<std::size_t> w{input_dim};
    const double dx = static_cast<double>(input_dim), dh = static_cast<double>(embedding_dim);
    for (std::size_t i = 1; i < num_layers; ++i)
        w.push_back(round_half_up(dx + (dh - dx) * static_cast<double>(i) / static_cast<double>(num_layers)));
    w.push_back(embedding_dim);
    return w;
}

std::vector<Matrix> AutoencoderModel::encoder_weights() const {
    std::vector<Matrix> out;
    for (const auto& l : encoder) out.push_back(l.weight);
    return out;
}

std::vector<Matrix*> AutoencoderModel::parameters() {
    std::vector<Matrix*> out;
    for (auto* layers : {&encoder, &decoder})
        for (auto& l : *layers) {
            out.push_back(&l.weight);
            out.push_back(&l.bias);
        }
    return out;
}

std::vector<const Matrix*> AutoencoderModel::parameters() const {
    std::vector<const Matrix*> out;
    for (const auto* layers : {&encoder, &decoder})
        for (const auto& l : *layers) {
            out.push_back(&l.weight);
            out.push_back(&l.bias);
        }
    return out;
}

AutoencoderModel init_model(const EncoderSpec& spec, Variant variant, double lambda, std::uint64_t seed) {
    spec.validate();
    AutoencoderModel m;
    m.spec = spec;
    m.variant = variant;
    m.lambda = lambda;
    effective_lambda(variant, lambda);

    Rng rng(seed);
    auto layer = [&rng](std::size_t in, std::size_t out) {
        const double bound = std::sqrt(6.0 / static_cast<double>(in + out));
        return LayerParams{Matrix::uniform(out, in, rng, -bound, bound), Matrix(1, out)};
    };
    const auto w = spec.widths();
    for (std::size_t i = 0; i + 1 < w.size(); ++i) m.encoder.push_back(layer(w[i], w[i + 1]));
    for (std::size_t i = w.size() - 1; i > 0; --i) m.decoder.push_back(layer(w[i], w[i - 1]));
    return m;
}

namespace {

Matrix dense_tanh(const Matrix& x, const LayerParams& l) {
    Matrix z = kernels::matmul_nt(x, l.weight);
    for (std::size_t r = 0; r < z.rows(); ++r) {
        auto row = z.row(r);
        for (std::size_t c = 0; c < row.size(); ++c) row[c] = std::tanh(row[c] + l.bias.data()[c]);
    }
    return z;
}

void check_input(const Matrix& x, std::size_t cols, const char* what) {
    if (x.cols() != cols)
        throw ShapeError(std::string(what) + ": expected " + std::to_string(cols) + " columns, got " + x.shape_string());
    if (!x.all_finite()) throw NumericError(std::string(what) + ": input contains non-finite values");
}

VarRef dense_tanh(Tape& tape, VarRef x, VarRef w, VarRef b) {
    const VarRef ones = tape.constant(Matrix(x.rows, 1, 1.0));
    return tape.tanh(tape.add(tape.matmul(x, tape.transpose(w)), tape.matmul(ones, b)));
}

}  // namespace

Encoded encode(const AutoencoderModel& model, const Matrix& x) {
    check_input(x, model.spec.input_dim, "encode");
    Encoded e{x, {}};
    e.trace.layer_outputs.push_back(x);
    for (const auto& l : model.encoder) {
        e.trace.layer_outputs.push_back(dense_tanh(e.trace.layer_outputs.back(), l));
    }
    e.embedding = e.trace.layer_outputs.back();
    return e;
}

Matrix decode(const AutoencoderModel& model, const Matrix& z) {
    check_input(z, model.spec.embedding_dim, "decode");
    Matrix h = z;
    for (const auto& l : model.decoder) h = dense_tanh(h, l);
    return h;
}

Matrix reconstruct(const AutoencoderModel& model, const Matrix& x) { return decode(model, encode(model, x).embedding); }

std::vector<VarRef> BoundModel::parameters() const {
    std::vector<VarRef> out;
    for (std::size_t i = 0; i < encoder_weights.size(); ++i) {
        out.push_back(encoder_weights[i]);
        out.push_back(encoder_biases[i]);
    }
    for (std::size_t i = 0; i < decoder_weights.size(); ++i) {
        out.push_back(decoder_weights[i]);
        out.push_back(decoder_biases[i]);
    }
    return out;
}

BoundModel bind(Tape& tape, const AutoencoderModel& model) {
    BoundModel b;
    for (const auto& l : model.encoder) {
        b.encoder_weights.push_back(tape.parameter(l.weight));
        b.encoder_biases.push_back(tape.parameter(l.bias));
    }
    for (const auto& l : model.decoder) {
        b.decoder_weights.push_back(tape.parameter(l.weight));
        b.decoder_biases.push_back(tape.parameter(l.bias));
    }
    return b;
}

LossNodes record_loss(Tape& tape, const AutoencoderModel& model, const BoundModel& bound, const Matrix& x, Exec exec) {
    check_input(x, model.spec.input_dim, "loss");
    const VarRef input = tape.constant(x);
    std::vector<VarRef> activations;
    VarRef h = input;
    for (std::size_t i = 0; i < bound.encoder_weights.size(); ++i) {
        h = dense_tanh(tape, h, bound.encoder_weights[i], bound.encoder_biases[i]);
        activations.push_back(h);
    }
    for (std::size_t i = 0; i < bound.decoder_weights.size(); ++i)
        h = dense_tanh(tape, h, bound.decoder_weights[i], bound.decoder_biases[i]);

    LossNodes n;
    n.recon = tape.mse(input, h);
    const double lambda = model.penalty_weight();
    if (lambda == 0.0) {
        n.penalty = tape.constant(Matrix::scalar(0.0));
        n.total = n.recon;
        return n;
    }
    n.penalty = model.variant == Variant::deepcae
                    ? record_deepcae_penalty(tape, activations, bound.encoder_weights, exec)
                    : record_stacked_penalty(tape, activations, bound.encoder_weights);
    n.total = tape.add(n.recon, tape.scale(n.penalty, lambda));
    return n;
}

LossValue loss(const AutoencoderModel& model, const Matrix& x) {
    Tape tape;
    const BoundModel b = bind(tape, model);
    const LossNodes n = record_loss(tape, model, b, x);
    return {tape.value(n.total).item(), tape.value(n.recon).item(), tape.value(n.penalty).item()};
}

double reconstruction_mse(const AutoencoderModel& model, const Matrix& x) {
    const Matrix r = reconstruct(model, x);
    double sum = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double d = r.data()[i] - x.data()[i];
        sum += d * d;
    }
    return sum / static_cast<double>(x.size());
}

// -- serialization ------------------------------------------------------------

namespace {

json matrix_json(const Matrix& m) {
    return {{"rows", m.rows()}, {"cols", m.cols()}, {"data", std::vector<double>(m.data().begin(), m.data().end())}};
}

Matrix matrix_from_json(const json& j) {
    const auto rows = j.at("rows").get<std::size_t>();
    const auto cols = j.at("cols").get<std::size_t>();
    return Matrix(rows, cols, j.at("data").get<std::vector<double>>());
}

json layers_json(const std::vector<LayerParams>& layers) {
    json arr = json::array();
    for (const auto& l : layers) arr.push_back({{"weight", matrix_json(l.weight)}, {"bias", matrix_json(l.bias)}});
    return arr;
}

std::vector<LayerParams> layers_from_json(const json& arr) {
    std::vector<LayerParams> out;
    for (const auto& l : arr) out.push_back({matrix_from_json(l.at("weight")), matrix_from_json(l.at("bias"))});
    return out;
}

}  // namespace

std::string serialize_model(const AutoencoderModel& model) {
    json j;
    j["format"] = "deepcae-model";
    j["format_version"] = kModelFormatVersion;
    j["variant"] = std::string(to_string(model.variant));
    j["lambda"] = model.lambda;
    j["spec"] = {{"input_dim", model.spec.input_dim},
                 {"embedding_dim", model.spec.embedding_dim},
                 {"num_layers", model.spec.num_layers},
                 {"compression_rate", model.spec.compression_rate}};
    j["encoder"] = layers_json(model.encoder);
    j["decoder"] = layers_json(model.decoder);
    return j.dump(1) + "\n";
}

AutoencoderModel deserialize_model(const std::string& text) {
    try {
        const json j = json::parse(text);
        if (j.at("format").get<std::string>() != "deepcae-model") throw ConfigError("not a model file");
        const int version = j.at("format_version").get<int>();
        if (version != kModelFormatVersion)
            throw ConfigError("unsupported model format version " + std::to_string(version));
        AutoencoderModel m;
        m.variant = parse_variant(j.at("variant").get<std::string>());
        m.lambda = j.at("lambda").get<double>();
        const json& s = j.at("spec");
        m.spec.input_dim = s.at("input_dim").get<std::size_t>();
        m.spec.embedding_dim = s.at("embedding_dim").get<std::size_t>();
        m.spec.num_layers = s.at("num_layers").get<std::size_t>();
        m.spec.compression_rate = s.at("compression_rate").get<double>();
        m.spec.validate();
        m.encoder = layers_from_json(j.at("encoder"));
        m.decoder = layers_from_json(j.at("decoder"));

        const auto w = m.spec.widths();
        if (m.encoder.size() != m.spec.num_layers || m.decoder.size() != m.spec.num_layers)
            throw ConfigError("model file layer count does not match its spec");
        for (std::size_t i = 0; i < m.spec.num_layers; ++i) {
            const auto& e = m.encoder[i];
            const auto& d = m.decoder[i];
            const std::size_t din = w[w.size() - 1 - i], dout = w[w.size() - 2 - i];
            if (e.weight.rows() != w[i + 1] || e.weight.cols() != w[i] || e.bias.cols() != w[i + 1] ||
                d.weight.rows() != dout || d.weight.cols() != din || d.bias.cols() != dout)
                throw ConfigError("model file layer " + std::to_string(i) + " shapes do not match its spec");
        }
        return m;
    } catch (const json::exception& e) {
        throw ConfigError(std::string("malformed model file: ") + e.what());
    } catch (const ShapeError& e) {
        throw ConfigError(std::string("malformed model file: ") + e.what());
    }
}

void save_model(const AutoencoderModel& model, const std::filesystem::path& path) {
    write_file_atomic(path, serialize_model(model));
}

AutoencoderModel load_model(const std::filesystem::path& path) { return deserialize_model(read_file(path)); }

}  // namespace deepcae
