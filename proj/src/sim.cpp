#include "sigprop/sim.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <unordered_map>

namespace sigprop {

namespace {

std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

Matrix gaussian(int rows, int cols, double var, Rng& rng) {
    std::normal_distribution<double> n(0.0, std::sqrt(std::max(var, 0.0)));
    Matrix m(rows, cols);
    for (Eigen::Index j = 0; j < m.cols(); ++j)
        for (Eigen::Index i = 0; i < m.rows(); ++i) m(i, j) = n(rng);
    return m;
}

Matrix dropout_mask(int rows, int cols, double p, Rng& rng) {
    std::bernoulli_distribution keep(1.0 - p);
    const double scale = 1.0 / (1.0 - p);
    Matrix m(rows, cols);
    for (Eigen::Index j = 0; j < m.cols(); ++j)
        for (Eigen::Index i = 0; i < m.rows(); ++i) m(i, j) = keep(rng) ? scale : 0.0;
    return m;
}

double avg(const std::vector<double>& v) {
    double s = 0.0;
    for (double x : v) s += x;
    return v.empty() ? 0.0 : s / v.size();
}

double std_err(const std::vector<double>& v, double centre) {
    if (v.size() < 2) return 0.0;
    double s = 0.0;
    for (double x : v) s += (x - centre) * (x - centre);
    return std::sqrt(s / (v.size() - 1.0) / v.size());
}

}  // namespace

std::uint64_t mix_seed(std::uint64_t master, std::uint64_t config, std::uint64_t trial) {
    return splitmix64(splitmix64(splitmix64(master) ^ config) ^ (trial * 0xd1b54a32d192ed03ULL));
}

Matrix sample_correlated(const SampleSpec& s, Rng& rng) {
    if (s.seq_len < 1 || s.dim < 1) throw std::invalid_argument("sample dimensions must be >= 1");
    if (!(s.corr_len >= 0.0 && s.corr_len < 1.0)) throw std::invalid_argument("corr_len must be in [0, 1)");
    if (!(s.variance >= 0.0)) throw std::invalid_argument("negative sample variance");
    Matrix x = gaussian(s.seq_len, s.dim, (1.0 - s.corr_len) * s.variance, rng);
    if (s.corr_len > 0.0) {
        const Matrix eps = gaussian(1, s.dim, s.corr_len * s.variance, rng);
        x.rowwise() += eps.row(0);
    }
    x.array() += s.mean;
    return x;
}

Matrix sample_correlated(const SampleSpec& spec) {
    Rng rng(spec.seed);
    return sample_correlated(spec, rng);
}

void MomentAccumulator::add(const Matrix& x) {
    if (x.size() == 0) throw std::invalid_argument("empty matrix");
    if (!shifted_) {
        shift_ = x.mean();
        shifted_ = true;
    }
    const Eigen::ArrayXXd y = x.array() - shift_;
    const double n = static_cast<double>(y.size());
    const double L = y.rows(), d = y.cols();
    m1_.push_back(y.sum() / n);
    m2_.push_back(y.square().sum() / n);
    if (L >= 2) {
        const Eigen::ArrayXd cs = y.colwise().sum().transpose();
        const Eigen::ArrayXd sq = y.square().colwise().sum().transpose();
        pl_.push_back(((cs.square() - sq) / (L * (L - 1.0))).mean());
    } else {
        pl_.push_back(NAN);
    }
    if (d >= 2) {
        const Eigen::ArrayXd rs = y.rowwise().sum();
        const Eigen::ArrayXd sq = y.square().rowwise().sum();
        pd_.push_back(((rs.square() - sq) / (d * (d - 1.0))).mean());
    } else {
        pd_.push_back(NAN);
    }
    count_ += y.size();
}

EmpiricalMoments MomentAccumulator::result() const {
    EmpiricalMoments e;
    e.trials = trials();
    e.count = count_;
    if (m1_.empty()) return e;
    const double M = avg(m1_);
    const double M2 = M * M;
    e.mean = shift_ + M;
    e.variance = std::max(0.0, avg(m2_) - M2);
    e.cov_len = avg(pl_) - M2;
    e.cov_dim = avg(pd_) - M2;

    std::vector<double> v(m2_.size()), c(pl_.size());
    for (std::size_t t = 0; t < m2_.size(); ++t) {
        v[t] = m2_[t] - M2;
        c[t] = pl_[t] - M2;
    }
    e.se_mean = std_err(m1_, M);
    e.se_variance = std_err(v, e.variance);
    e.se_cov_len = std_err(c, e.cov_len);

    const double scale = avg(m2_) + shift_ * shift_;
    e.corr_defined = e.variance > 1e-13 * scale && e.variance > 0.0;
    if (e.corr_defined) {
        e.corr_len = std::isnan(e.cov_len) ? 0.0 : e.cov_len / e.variance;
        e.corr_dim = std::isnan(e.cov_dim) ? 0.0 : e.cov_dim / e.variance;
    }
    return e;
}

EmpiricalMoments measure_moments(const Matrix& x) {
    MomentAccumulator acc;
    acc.add(x);
    return acc.result();
}

ComponentOp::ComponentOp(const ComponentSpec& spec, std::uint64_t seed) : spec_(spec) {
    validate(spec);
    Rng rng(seed);
    const int L = spec.seq_len;
    switch (spec.kind) {
        case Kind::Linear:
            w_ = gaussian(spec.d_in, spec.d_out, spec.weight_var, rng);
            break;
        case Kind::Dropout:
            if (spec.dropout_p > 0.0) mask_ = dropout_mask(L, spec.d_in, spec.dropout_p, rng);
            break;
        case Kind::ShaNoV:
        case Kind::ShaFull: {
            const bool value = spec.value_var > 0.0;
            const int dk = value ? spec.d_out : spec.d_in;
            if (!value && spec.d_out != spec.d_in) throw std::invalid_argument("attention without W_V needs d_out == d_in");
            const double s = std::sqrt(spec.weight_var);
            wq_ = gaussian(spec.d_in, dk, s, rng);
            wk_ = gaussian(spec.d_in, dk, s, rng);
            if (value) wv_ = gaussian(spec.d_in, spec.d_out, spec.value_var, rng);
            if (spec.dropout_p > 0.0) mask_ = dropout_mask(L, L, spec.dropout_p, rng);
            break;
        }
        case Kind::Embedding:
            throw std::invalid_argument("use run_embedding_sim for embeddings");
        default:
            break;
    }
}

Matrix ComponentOp::forward(const Matrix& x) {
    x_ = x;
    switch (spec_.kind) {
        case Kind::Linear: y_ = x * w_; break;
        case Kind::Dropout: y_ = mask_.size() ? Matrix(x.cwiseProduct(mask_)) : x; break;
        case Kind::ReLU: y_ = ops::relu(x); break;
        case Kind::GeLU: y_ = ops::gelu(x); break;
        case Kind::LayerNorm: y_ = ops::layernorm_forward<double>(x, ln_); break;
        case Kind::Softmax: y_ = ops::softmax_rows<double>(x); break;
        case Kind::ShaNoV:
        case Kind::ShaFull:
            y_ = ops::attention_forward<double>(x, wq_, wk_, wv_.size() ? &wv_ : nullptr, mask_.size() ? &mask_ : nullptr,
                                                attn_);
            break;
        case Kind::Embedding: throw std::invalid_argument("embedding op");
    }
    return y_;
}

Matrix ComponentOp::backward(const Matrix& g) const {
    switch (spec_.kind) {
        case Kind::Linear: return g * w_.transpose();
        case Kind::Dropout: return mask_.size() ? Matrix(g.cwiseProduct(mask_)) : g;
        case Kind::ReLU: return ops::relu_backward(x_, g);
        case Kind::GeLU: return ops::gelu_backward(x_, g);
        case Kind::LayerNorm: return ops::layernorm_backward<double>(g, ln_);
        case Kind::Softmax: return ops::softmax_rows_backward<double>(y_, g);
        case Kind::ShaNoV:
        case Kind::ShaFull:
            return ops::attention_backward<double>(g, wq_, wk_, wv_.size() ? &wv_ : nullptr,
                                                   mask_.size() ? &mask_ : nullptr, attn_);
        case Kind::Embedding: break;
    }
    throw std::invalid_argument("embedding op");
}

ComponentSimResult run_component_sim(const ComponentSpec& spec, const SampleSpec& xs, const SampleSpec& gs) {
    validate(spec);
    if (xs.trials < 1) throw std::invalid_argument("trials must be >= 1");
    const bool softmax = spec.kind == Kind::Softmax;
    if (!softmax && (xs.seq_len != spec.seq_len || xs.dim != spec.d_in))
        throw std::invalid_argument("sample shape does not match the component");
    if (softmax && xs.seq_len != spec.seq_len) throw std::invalid_argument("softmax sample length mismatch");

    MomentAccumulator in, gout, fwd, bwd;
    for (int t = 0; t < xs.trials; ++t) {
        Rng rng(mix_seed(xs.seed, gs.seed, t));
        ComponentOp op(spec, rng());
        Matrix x = sample_correlated(xs, rng);
        if (softmax) x.transposeInPlace();
        const Matrix y = op.forward(x);
        SampleSpec g = gs;
        g.seq_len = static_cast<int>(y.rows());
        g.dim = static_cast<int>(y.cols());
        const Matrix dy = sample_correlated(g, rng);
        in.add(x);
        gout.add(dy);
        fwd.add(y);
        bwd.add(op.backward(dy));
    }
    return {in.result(), gout.result(), fwd.result(), bwd.result()};
}

ZipfSampler::ZipfSampler(int vocab_size) {
    if (vocab_size < 2) throw std::invalid_argument("vocab_size must be >= 2");
    const double c = 1.0 / (0.58 + std::log(static_cast<double>(vocab_size)));
    cdf_.resize(vocab_size);
    double acc = 0.0;
    for (int i = 0; i < vocab_size; ++i) cdf_[i] = (acc += c / (i + 1.0));
    for (double& v : cdf_) v /= acc;
    cdf_.back() = 1.0;
}

int ZipfSampler::operator()(Rng& rng) const {
    const double u = std::uniform_real_distribution<double>(0.0, 1.0)(rng);
    const auto it = std::upper_bound(cdf_.begin(), cdf_.end(), u);
    return static_cast<int>(std::min<std::ptrdiff_t>(it - cdf_.begin(), cdf_.size() - 1));
}

double ZipfSampler::prob(int id) const { return id == 0 ? cdf_[0] : cdf_[id] - cdf_[id - 1]; }

int sample_segment_boundary(int seq_len, Rng& rng) {
    if (seq_len < 2) throw std::invalid_argument("seq_len must be >= 2");
    return std::uniform_int_distribution<int>(1, seq_len - 1)(rng);
}

EmpiricalMoments run_embedding_sim(int vocab_size, int seq_len, int dim, int num_types, double weight_var, int trials,
                                   std::uint64_t seed) {
    if (num_types < 1 || num_types > 3) throw std::invalid_argument("num_types must be 1, 2 or 3");
    const ZipfSampler zipf(vocab_size);
    MomentAccumulator acc;
    for (int t = 0; t < trials; ++t) {
        Rng rng(mix_seed(seed, 0xe3b, t));
        std::unordered_map<int, int> slot;
        std::vector<int> ids(seq_len);
        for (int& id : ids) id = zipf(rng);
        for (int id : ids) slot.try_emplace(id, static_cast<int>(slot.size()));
        // Rows are drawn in order of first appearance; unused rows never matter.
        const Matrix tok = gaussian(static_cast<int>(slot.size()), dim, weight_var, rng);
        Matrix x(seq_len, dim);
        for (int i = 0; i < seq_len; ++i) x.row(i) = tok.row(slot[ids[i]]);
        if (num_types >= 2) x += gaussian(seq_len, dim, weight_var, rng);
        if (num_types >= 3) {
            const Matrix seg = gaussian(2, dim, weight_var, rng);
            const int b = sample_segment_boundary(seq_len, rng);
            for (int i = 0; i < seq_len; ++i) x.row(i) += seg.row(i < b ? 0 : 1);
        }
        acc.add(x);
    }
    return acc.result();
}

}  // namespace sigprop
