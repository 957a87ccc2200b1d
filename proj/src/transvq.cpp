#include "driftvq/transvq.hpp"

#include <quadmath.h>
#include <algorithm>
#include <atomic>
#include <charconv>
#include <cmath>
#include <istream>
#include <ostream>
#include <random>
#include <sstream>
#include <string>

namespace driftvq {

namespace {

constexpr std::array<const char*, kProjectorTensorCount> kNames = {
    "embed_in", "b_in", "w_q", "b_q", "w_k", "b_k", "w_v", "b_v",
    "w_o", "b_o", "w_mlp_in", "b_mlp_in", "w_mlp_out", "b_mlp_out", "embed_out",
};

std::uint64_t next_version() {
    static std::atomic<std::uint64_t> counter{0};
    return ++counter;
}

struct Shape {
    std::size_t rows, cols;
};

Shape tensor_shape(const ProjectorConfig& c, ProjectorTensor t) {
    const std::size_t m = c.d_model;
    const std::size_t h = c.hidden();
    switch (t) {
        case ProjectorTensor::embed_in: return {c.dim, m};
        case ProjectorTensor::w_q:
        case ProjectorTensor::w_k:
        case ProjectorTensor::w_v:
        case ProjectorTensor::w_o: return {m, m};
        case ProjectorTensor::b_in:
        case ProjectorTensor::b_q:
        case ProjectorTensor::b_k:
        case ProjectorTensor::b_v:
        case ProjectorTensor::b_o:
        case ProjectorTensor::b_mlp_out: return {1, m};
        case ProjectorTensor::w_mlp_in: return {m, h};
        case ProjectorTensor::b_mlp_in: return {1, h};
        case ProjectorTensor::w_mlp_out: return {h, m};
        case ProjectorTensor::embed_out: return {m, c.dim};
    }
    return {0, 0};
}

bool is_bias(ProjectorTensor t) {
    switch (t) {
        case ProjectorTensor::b_in:
        case ProjectorTensor::b_q:
        case ProjectorTensor::b_k:
        case ProjectorTensor::b_v:
        case ProjectorTensor::b_o:
        case ProjectorTensor::b_mlp_in:
        case ProjectorTensor::b_mlp_out: return true;
        default: return false;
    }
}

// Minimal dense matrix over a scalar type, so the same forward code runs in
// double (tape) and the wider types used for difference quotients.
template <class T>
struct Dense {
    std::size_t r = 0, c = 0;
    std::vector<T> v;

    Dense() = default;
    Dense(std::size_t rows, std::size_t cols) : r(rows), c(cols), v(rows * cols, T(0)) {}
    T& operator()(std::size_t i, std::size_t j) { return v[i * c + j]; }
    T operator()(std::size_t i, std::size_t j) const { return v[i * c + j]; }
};

template <class T>
Dense<T> from_matrix(const Matrix& m) {
    Dense<T> out(m.rows(), m.cols());
    auto f = m.flat();
    for (std::size_t i = 0; i < f.size(); ++i) out.v[i] = static_cast<T>(f[i]);
    return out;
}

Matrix to_matrix(const Dense<double>& d) {
    Matrix out(d.r, d.c);
    std::copy(d.v.begin(), d.v.end(), out.flat().begin());
    return out;
}

// a b
template <class T>
Dense<T> mul(const Dense<T>& a, const Dense<T>& b) {
    Dense<T> out(a.r, b.c);
    for (std::size_t i = 0; i < a.r; ++i) {
        for (std::size_t k = 0; k < a.c; ++k) {
            const T aik = a(i, k);
            for (std::size_t j = 0; j < b.c; ++j) out(i, j) += aik * b(k, j);
        }
    }
    return out;
}

// a b^T
template <class T>
Dense<T> mul_bt(const Dense<T>& a, const Dense<T>& b) {
    Dense<T> out(a.r, b.r);
    for (std::size_t i = 0; i < a.r; ++i) {
        for (std::size_t j = 0; j < b.r; ++j) {
            T acc = 0;
            for (std::size_t k = 0; k < a.c; ++k) acc += a(i, k) * b(j, k);
            out(i, j) = acc;
        }
    }
    return out;
}

// a^T b
template <class T>
Dense<T> mul_at(const Dense<T>& a, const Dense<T>& b) {
    Dense<T> out(a.c, b.c);
    for (std::size_t k = 0; k < a.r; ++k) {
        for (std::size_t i = 0; i < a.c; ++i) {
            const T aki = a(k, i);
            for (std::size_t j = 0; j < b.c; ++j) out(i, j) += aki * b(k, j);
        }
    }
    return out;
}

template <class T>
void add_row(Dense<T>& a, const Dense<T>& bias) {
    for (std::size_t i = 0; i < a.r; ++i) {
        for (std::size_t j = 0; j < a.c; ++j) a(i, j) += bias(0, j);
    }
}

template <class T>
Dense<T> plus(const Dense<T>& a, const Dense<T>& b) {
    Dense<T> out = a;
    for (std::size_t i = 0; i < out.v.size(); ++i) out.v[i] += b.v[i];
    return out;
}

Dense<double> col_sum(const Dense<double>& a) {
    Dense<double> out(1, a.c);
    for (std::size_t i = 0; i < a.r; ++i) {
        for (std::size_t j = 0; j < a.c; ++j) out(0, j) += a(i, j);
    }
    return out;
}

template <class T>
using ParamSet = std::array<Dense<T>, kProjectorTensorCount>;

template <class T>
ParamSet<T> convert(const ProjectorParams& p) {
    ParamSet<T> out;
    for (std::size_t i = 0; i < kProjectorTensorCount; ++i) {
        out[i] = from_matrix<T>(p.tensor(static_cast<ProjectorTensor>(i)));
    }
    return out;
}

template <class T>
const Dense<T>& at(const ParamSet<T>& p, ProjectorTensor t) {
    return p[static_cast<std::size_t>(t)];
}

// Scalar helpers so the forward pass also runs in quad precision.
inline double tanh_of(double x) { return std::tanh(x); }
inline double sqrt_of(double x) { return std::sqrt(x); }
inline long double tanh_of(long double x) { return std::tanh(x); }
inline long double sqrt_of(long double x) { return std::sqrt(x); }
inline __float128 tanh_of(__float128 x) { return tanhq(x); }
inline __float128 sqrt_of(__float128 x) { return sqrtq(x); }

template <class T>
struct Activations {
    Dense<T> h0, q, k, v, scores, attended, d1, h1, pre, u, d2, out;
};

template <class T>
Activations<T> forward(const ParamSet<T>& p, const Dense<T>& base, std::size_t d_model) {
    using PT = ProjectorTensor;
    Activations<T> a;
    a.h0 = mul(base, at(p, PT::embed_in));
    add_row(a.h0, at(p, PT::b_in));
    a.q = mul(a.h0, at(p, PT::w_q));
    add_row(a.q, at(p, PT::b_q));
    a.k = mul(a.h0, at(p, PT::w_k));
    add_row(a.k, at(p, PT::b_k));
    a.v = mul(a.h0, at(p, PT::w_v));
    add_row(a.v, at(p, PT::b_v));

    a.scores = mul_bt(a.q, a.k);
    const T inv_sqrt = T(1) / sqrt_of(static_cast<T>(d_model));
    for (T& s : a.scores.v) s *= inv_sqrt;
    a.attended = mul(a.scores, a.v);

    a.d1 = mul(a.attended, at(p, PT::w_o));
    add_row(a.d1, at(p, PT::b_o));
    a.h1 = plus(a.h0, a.d1);

    a.pre = mul(a.h1, at(p, PT::w_mlp_in));
    add_row(a.pre, at(p, PT::b_mlp_in));
    a.u = a.pre;
    for (T& x : a.u.v) x = tanh_of(x);
    a.d2 = mul(a.u, at(p, PT::w_mlp_out));
    add_row(a.d2, at(p, PT::b_mlp_out));

    a.out = plus(base, mul(plus(a.d1, a.d2), at(p, PT::embed_out)));
    return a;
}

void check_base(const ProjectorParams& params, const Codebook& base) {
    if (base.dim() != params.config().dim) {
        throw ShapeError("project: codebook dimension " + std::to_string(base.dim()) +
                         " != projector dimension " + std::to_string(params.config().dim));
    }
}

}  // namespace

const char* tensor_name(ProjectorTensor t) { return kNames[static_cast<std::size_t>(t)]; }

std::optional<ProjectorTensor> parse_tensor_name(std::string_view name) {
    for (std::size_t i = 0; i < kProjectorTensorCount; ++i) {
        if (name == kNames[i]) return static_cast<ProjectorTensor>(i);
    }
    return std::nullopt;
}

ProjectorParams::ProjectorParams(const ProjectorConfig& config) : config_(config) {
    if (config.dim == 0 || config.d_model == 0 || config.mlp_ratio == 0) {
        throw InvalidInput("ProjectorParams: dimensions must be >= 1");
    }
    for (std::size_t i = 0; i < kProjectorTensorCount; ++i) {
        const Shape s = tensor_shape(config, static_cast<ProjectorTensor>(i));
        tensors_[i] = Matrix(s.rows, s.cols);
    }
    version_ = next_version();
}

ProjectorParams ProjectorParams::zeros(const ProjectorConfig& config) {
    return ProjectorParams(config);
}

ProjectorParams ProjectorParams::random(const ProjectorConfig& config, std::uint64_t seed,
                                        bool identity_init, double scale) {
    ProjectorParams p(config);
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> normal(0.0, 1.0);
    for (std::size_t i = 0; i < kProjectorTensorCount; ++i) {
        const auto t = static_cast<ProjectorTensor>(i);
        Matrix& m = p.tensors_[i];
        const double sd = is_bias(t) ? 0.1 * scale
                                     : scale / std::sqrt(static_cast<double>(m.rows()));
        for (double& v : m.flat()) v = sd * normal(rng);
    }
    if (identity_init) {
        for (auto t : {ProjectorTensor::w_o, ProjectorTensor::b_o, ProjectorTensor::w_mlp_out,
                       ProjectorTensor::b_mlp_out}) {
            auto f = p.tensors_[index(t)].flat();
            std::fill(f.begin(), f.end(), 0.0);
        }
    }
    p.touch();
    return p;
}

Matrix& ProjectorParams::mutable_tensor(ProjectorTensor t) {
    touch();
    return tensors_[index(t)];
}

void ProjectorParams::touch() { version_ = next_version(); }

std::size_t ProjectorParams::parameter_count() const {
    std::size_t n = 0;
    for (const Matrix& m : tensors_) n += m.rows() * m.cols();
    return n;
}

bool ProjectorParams::all_finite() const {
    return std::all_of(tensors_.begin(), tensors_.end(),
                       [](const Matrix& m) { return m.all_finite(); });
}

void ProjectorParams::axpy(double scale, const ProjectorParams& other) {
    if (!(other.config_.dim == config_.dim && other.config_.d_model == config_.d_model &&
          other.config_.mlp_ratio == config_.mlp_ratio)) {
        throw ShapeError("ProjectorParams::axpy: configuration mismatch");
    }
    for (std::size_t i = 0; i < kProjectorTensorCount; ++i) {
        auto dst = tensors_[i].flat();
        auto src = other.tensors_[i].flat();
        for (std::size_t j = 0; j < dst.size(); ++j) dst[j] += scale * src[j];
    }
    touch();
}

Projection project(const ProjectorParams& params, const Codebook& base) {
    check_base(params, base);
    const auto a = forward(convert<double>(params), from_matrix<double>(base.codes()),
                           params.config().d_model);
    ProjectorTape tape;
    tape.params_version = params.version();
    tape.base = base.codes();
    tape.h0 = to_matrix(a.h0);
    tape.q = to_matrix(a.q);
    tape.k = to_matrix(a.k);
    tape.v = to_matrix(a.v);
    tape.scores = to_matrix(a.scores);
    tape.attended = to_matrix(a.attended);
    tape.d1 = to_matrix(a.d1);
    tape.h1 = to_matrix(a.h1);
    tape.pre = to_matrix(a.pre);
    tape.u = to_matrix(a.u);
    tape.d2 = to_matrix(a.d2);
    tape.output = to_matrix(a.out);
    Matrix out = tape.output;
    return {Codebook(std::move(out)), std::move(tape)};
}

EmbeddingLoss embedding_loss(std::span<const double> c_prime_winner,
                             std::span<const double> e_x) {
    if (c_prime_winner.size() != e_x.size()) throw ShapeError("embedding_loss: size mismatch");
    EmbeddingLoss out{0.0, std::vector<double>(e_x.size())};
    for (std::size_t j = 0; j < e_x.size(); ++j) {
        const double diff = c_prime_winner[j] - e_x[j];
        out.loss += diff * diff;
        out.gradient[j] = 2.0 * diff;
    }
    return out;
}

ProjectorParams backward(const ProjectorParams& params, const ProjectorTape& tape,
                         const Matrix& upstream) {
    using PT = ProjectorTensor;
    if (tape.params_version != params.version()) {
        throw InvalidState("backward: tape was recorded against different parameters");
    }
    if (upstream.rows() != tape.output.rows() || upstream.cols() != tape.output.cols()) {
        throw ShapeError("backward: upstream gradient must match C' shape");
    }
    const auto p = convert<double>(params);
    const auto g = from_matrix<double>(upstream);
    const auto base = from_matrix<double>(tape.base);
    const auto h0 = from_matrix<double>(tape.h0);
    const auto q = from_matrix<double>(tape.q);
    const auto k = from_matrix<double>(tape.k);
    const auto v = from_matrix<double>(tape.v);
    const auto scores = from_matrix<double>(tape.scores);
    const auto attended = from_matrix<double>(tape.attended);
    const auto d1 = from_matrix<double>(tape.d1);
    const auto h1 = from_matrix<double>(tape.h1);
    const auto pre = from_matrix<double>(tape.pre);
    const auto u = from_matrix<double>(tape.u);
    const auto d2 = from_matrix<double>(tape.d2);

    ProjectorParams grads = ProjectorParams::zeros(params.config());
    auto put = [&grads](PT t, const Dense<double>& d) {
        Matrix& m = grads.mutable_tensor(t);
        std::copy(d.v.begin(), d.v.end(), m.flat().begin());
    };

    // C' = C + (D1 + D2) E_out
    put(PT::embed_out, mul_at(plus(d1, d2), g));
    const Dense<double> d_delta = mul_bt(g, at(p, PT::embed_out));

    // D2 = U W2 + b2, U = tanh(H1 W1 + b1)
    put(PT::w_mlp_out, mul_at(u, d_delta));
    put(PT::b_mlp_out, col_sum(d_delta));
    Dense<double> d_pre = mul_bt(d_delta, at(p, PT::w_mlp_out));
    // tanh' = 1 / cosh^2; 1 - u^2 cancels badly once tanh saturates.
    for (std::size_t i = 0; i < d_pre.v.size(); ++i) {
        const double ch = std::cosh(pre.v[i]);
        d_pre.v[i] /= ch * ch;
    }
    put(PT::w_mlp_in, mul_at(h1, d_pre));
    put(PT::b_mlp_in, col_sum(d_pre));
    const Dense<double> d_h1 = mul_bt(d_pre, at(p, PT::w_mlp_in));

    // D1 feeds C' directly and through H1 = H0 + D1.
    const Dense<double> d_d1 = plus(d_delta, d_h1);
    put(PT::w_o, mul_at(attended, d_d1));
    put(PT::b_o, col_sum(d_d1));
    const Dense<double> d_att = mul_bt(d_d1, at(p, PT::w_o));

    // attended = S V, S = Q K^T / sqrt(m)
    const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(params.config().d_model));
    Dense<double> d_scores = mul_bt(d_att, v);
    for (double& x : d_scores.v) x *= inv_sqrt;
    const Dense<double> d_v = mul_at(scores, d_att);
    const Dense<double> d_q = mul(d_scores, k);
    const Dense<double> d_k = mul_at(d_scores, q);

    put(PT::w_q, mul_at(h0, d_q));
    put(PT::b_q, col_sum(d_q));
    put(PT::w_k, mul_at(h0, d_k));
    put(PT::b_k, col_sum(d_k));
    put(PT::w_v, mul_at(h0, d_v));
    put(PT::b_v, col_sum(d_v));

    Dense<double> d_h0 = d_h1;
    d_h0 = plus(d_h0, mul_bt(d_q, at(p, PT::w_q)));
    d_h0 = plus(d_h0, mul_bt(d_k, at(p, PT::w_k)));
    d_h0 = plus(d_h0, mul_bt(d_v, at(p, PT::w_v)));
    put(PT::embed_in, mul_at(base, d_h0));
    put(PT::b_in, col_sum(d_h0));
    return grads;
}

TransVqStepReport train_step(ProjectorParams& params, const Codebook& base,
                             std::span<const double> e_x, std::size_t winner, double lr) {
    check_base(params, base);
    if (winner >= base.size()) throw InvalidInput("train_step: winner index out of range");
    if (e_x.size() != base.dim()) throw ShapeError("train_step: e_x dimension mismatch");

    const Projection before = project(params, base);
    const EmbeddingLoss l = embedding_loss(before.codebook.code(winner), e_x);
    Matrix upstream(base.size(), base.dim());
    std::copy(l.gradient.begin(), l.gradient.end(), upstream.row(winner).begin());
    const ProjectorParams grads = backward(params, before.tape, upstream);
    if (lr != 0.0) params.axpy(-lr, grads);

    const Projection after = project(params, base);
    TransVqStepReport rep;
    rep.loss_before = l.loss;
    rep.loss_after = embedding_loss(after.codebook.code(winner), e_x).loss;
    rep.before = before.codebook.codes();
    rep.after = after.codebook.codes();
    for (std::size_t j = 0; j < base.size(); ++j) {
        rep.displacement_norms.push_back(std::sqrt(squared_distance(rep.after.row(j),
                                                                    rep.before.row(j))));
    }
    return rep;
}

namespace {

template <class T>
class CentralDifference {
public:
    CentralDifference(const ProjectorParams& params, const Codebook& base, const Matrix& probe)
        : params_(convert<T>(params)),
          base_(from_matrix<T>(base.codes())),
          probe_(from_matrix<T>(probe)),
          d_model_(params.config().d_model) {}

    // d<probe, C'>/d(tensor t, entry i) by central differences.
    double operator()(std::size_t t, std::size_t i, double epsilon) {
        T& value = params_[t].v[i];
        const T saved = value;
        const T eps = static_cast<T>(epsilon);
        value = saved + eps;
        const T up = loss();
        value = saved - eps;
        const T down = loss();
        value = saved;
        return static_cast<double>((up - down) / (2 * eps));
    }

private:
    T loss() const {
        const auto a = forward(params_, base_, d_model_);
        T acc = 0;
        for (std::size_t i = 0; i < a.out.v.size(); ++i) acc += probe_.v[i] * a.out.v[i];
        return acc;
    }

    ParamSet<T> params_;
    Dense<T> base_, probe_;
    std::size_t d_model_;
};

}  // namespace

GradientCheckResult gradient_check(const ProjectorParams& params, const Codebook& base,
                                   double epsilon, std::uint64_t probe_seed,
                                   std::optional<GradientFault> fault) {
    check_base(params, base);
    if (!(epsilon >= 1e-7 && epsilon <= 1e-3)) {
        throw InvalidInput("gradient_check: epsilon must lie in [1e-7, 1e-3]");
    }
    Matrix probe(base.size(), base.dim());
    std::mt19937_64 rng(probe_seed);
    std::normal_distribution<double> normal(0.0, 1.0);
    for (double& x : probe.flat()) x = normal(rng);

    const Projection proj = project(params, base);
    ProjectorParams analytic = backward(params, proj.tape, probe);
    if (fault) {
        for (double& x : analytic.mutable_tensor(fault->tensor).flat()) x *= fault->factor;
    }

    // Screen every entry in long double; entries that look off are redone in
    // quad precision, where cancellation in (up - down) is negligible.
    CentralDifference<long double> coarse(params, base, probe);
    CentralDifference<__float128> fine(params, base, probe);
    auto relative = [](double a, double n) {
        return std::abs(a - n) / (std::abs(a) + std::abs(n) + 1e-12);
    };

    GradientCheckResult result;
    for (std::size_t t = 0; t < kProjectorTensorCount; ++t) {
        const auto grad = analytic.tensor(static_cast<ProjectorTensor>(t)).flat();
        for (std::size_t i = 0; i < grad.size(); ++i) {
            double rel = relative(grad[i], coarse(t, i, epsilon));
            if (rel > 1e-7) rel = relative(grad[i], fine(t, i, epsilon));
            if (rel > result.max_relative_error) {
                result = {rel, static_cast<ProjectorTensor>(t), i};
            }
        }
    }
    return result;
}

namespace {

std::string format_double(double v) {
    std::array<char, 64> buf{};
    const auto res = std::to_chars(buf.data(), buf.data() + buf.size(), v);
    return std::string(buf.data(), res.ptr);
}

double parse_double(const std::string& tok) {
    double v = 0.0;
    const auto res = std::from_chars(tok.data(), tok.data() + tok.size(), v);
    if (res.ec != std::errc{} || res.ptr != tok.data() + tok.size()) {
        throw ConfigError("load_params: bad number '" + tok + "'");
    }
    return v;
}

}  // namespace

void save_params(std::ostream& out, const ProjectorParams& params) {
    const ProjectorConfig& c = params.config();
    out << "driftvq-projector 1\n";
    out << "dim " << c.dim << " d_model " << c.d_model << " mlp_ratio " << c.mlp_ratio << "\n";
    for (std::size_t t = 0; t < kProjectorTensorCount; ++t) {
        const Matrix& m = params.tensor(static_cast<ProjectorTensor>(t));
        out << kNames[t] << ' ' << m.rows() << ' ' << m.cols() << '\n';
        for (std::size_t r = 0; r < m.rows(); ++r) {
            for (std::size_t col = 0; col < m.cols(); ++col) {
                if (col) out << ' ';
                out << format_double(m(r, col));
            }
            out << '\n';
        }
    }
}

ProjectorParams load_params(std::istream& in) {
    std::string magic;
    int version = 0;
    if (!(in >> magic >> version) || magic != "driftvq-projector") {
        throw ConfigError("load_params: not a projector parameter file");
    }
    if (version != 1) throw ConfigError("load_params: unsupported version " + std::to_string(version));
    std::string k1, k2, k3;
    ProjectorConfig c;
    if (!(in >> k1 >> c.dim >> k2 >> c.d_model >> k3 >> c.mlp_ratio) || k1 != "dim" ||
        k2 != "d_model" || k3 != "mlp_ratio") {
        throw ConfigError("load_params: malformed shape header");
    }
    ProjectorParams p = ProjectorParams::zeros(c);
    for (std::size_t t = 0; t < kProjectorTensorCount; ++t) {
        std::string name;
        std::size_t rows = 0, cols = 0;
        if (!(in >> name >> rows >> cols)) throw ConfigError("load_params: truncated file");
        const auto which = parse_tensor_name(name);
        if (!which) throw ConfigError("load_params: unknown tensor '" + name + "'");
        Matrix& m = p.mutable_tensor(*which);
        if (m.rows() != rows || m.cols() != cols) {
            throw ConfigError("load_params: tensor '" + name + "' has wrong shape");
        }
        for (double& v : m.flat()) {
            std::string tok;
            if (!(in >> tok)) throw ConfigError("load_params: truncated tensor '" + name + "'");
            v = parse_double(tok);
        }
    }
    return p;
}

}  // namespace driftvq
