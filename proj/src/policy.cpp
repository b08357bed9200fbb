#include "unicon/policy.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numbers>
#include <sstream>

#include "unicon/error.hpp"

namespace unicon {

Activation activation_from(std::string_view name) {
    if (name == "tanh") return Activation::tanh;
    if (name == "linear") return Activation::linear;
    throw InvalidArgument("unknown activation '" + std::string(name) + "'");
}

std::string_view activation_name(Activation a) { return a == Activation::tanh ? "tanh" : "linear"; }

// ---------------------------------------------------------------------------
// MLP

Mlp::Mlp(std::vector<int> layer_sizes, Activation activation) : sizes_(std::move(layer_sizes)), activation_(activation) {
    if (sizes_.size() < 2) throw InvalidArgument("network needs an input and an output size");
    for (int s : sizes_)
        if (s < 1) throw InvalidArgument("layer sizes must be positive");
    Eigen::Index n = 0;
    for (std::size_t l = 0; l + 1 < sizes_.size(); ++l) {
        offsets_.push_back(n);
        n += static_cast<Eigen::Index>(sizes_[l + 1]) * (sizes_[l] + 1);
    }
    params_ = Eigen::VectorXd::Zero(n);
}

Mlp Mlp::create(int inputs, const std::vector<int>& hidden, int outputs, Rng& rng, Activation activation,
                double output_gain) {
    std::vector<int> sizes{inputs};
    sizes.insert(sizes.end(), hidden.begin(), hidden.end());
    sizes.push_back(outputs);
    Mlp net(sizes, activation);
    for (int l = 0; l < net.num_layers(); ++l) {
        const int rows = sizes[static_cast<std::size_t>(l) + 1];
        const int cols = sizes[static_cast<std::size_t>(l)];
        const int big = std::max(rows, cols);
        Eigen::MatrixXd g(big, big);
        for (Eigen::Index j = 0; j < g.cols(); ++j)
            for (Eigen::Index i = 0; i < g.rows(); ++i) g(i, j) = normal(rng);
        Eigen::HouseholderQR<Eigen::MatrixXd> qr(g);
        Eigen::MatrixXd q = qr.householderQ();
        // sign fix makes the draw uniform over orthogonal matrices
        const Eigen::VectorXd d = qr.matrixQR().diagonal();
        for (Eigen::Index j = 0; j < q.cols(); ++j)
            if (d[j] < 0) q.col(j) = -q.col(j);
        const double gain = l + 1 == net.num_layers() ? output_gain : std::numbers::sqrt2;
        net.weight(l) = gain * q.topLeftCorner(rows, cols);
    }
    return net;
}

Eigen::Map<Eigen::MatrixXd> Mlp::weight(int l) {
    const auto lu = static_cast<std::size_t>(l);
    return {params_.data() + offset(l), sizes_[lu + 1], sizes_[lu]};
}

Eigen::Map<const Eigen::MatrixXd> Mlp::weight(int l) const {
    const auto lu = static_cast<std::size_t>(l);
    return {params_.data() + offset(l), sizes_[lu + 1], sizes_[lu]};
}

Eigen::Map<Eigen::VectorXd> Mlp::bias(int l) {
    const auto lu = static_cast<std::size_t>(l);
    return {params_.data() + offset(l) + static_cast<Eigen::Index>(sizes_[lu + 1]) * sizes_[lu], sizes_[lu + 1]};
}

Eigen::Map<const Eigen::VectorXd> Mlp::bias(int l) const {
    const auto lu = static_cast<std::size_t>(l);
    return {params_.data() + offset(l) + static_cast<Eigen::Index>(sizes_[lu + 1]) * sizes_[lu], sizes_[lu + 1]};
}

Eigen::VectorXd Mlp::forward(const Eigen::VectorXd& x) const {
    const Eigen::MatrixXd out = forward(Eigen::MatrixXd(x), nullptr);
    return out.col(0);
}

Eigen::MatrixXd Mlp::forward(const Eigen::MatrixXd& x, MlpCache* cache) const {
    if (x.rows() != input_size())
        throw InvalidArgument("network expects " + std::to_string(input_size()) + " inputs, got " +
                              std::to_string(x.rows()));
    if (cache) {
        cache->inputs.clear();
        cache->outputs.clear();
    }
    Eigen::MatrixXd h = x;
    for (int l = 0; l < num_layers(); ++l) {
        Eigen::MatrixXd z = weight(l) * h;
        z.colwise() += bias(l);
        if (l + 1 < num_layers() && activation_ == Activation::tanh) z = z.array().tanh().matrix();
        if (cache) {
            cache->inputs.push_back(std::move(h));
            cache->outputs.push_back(z);
        }
        h = std::move(z);
    }
    return h;
}

Eigen::MatrixXd Mlp::backward(const MlpCache& cache, const Eigen::MatrixXd& d_output, Eigen::VectorXd& grad) const {
    if (grad.size() != num_params()) grad = Eigen::VectorXd::Zero(num_params());
    Eigen::MatrixXd delta = d_output;
    for (int l = num_layers() - 1; l >= 0; --l) {
        const auto lu = static_cast<std::size_t>(l);
        if (l + 1 < num_layers() && activation_ == Activation::tanh)
            delta = (delta.array() * (1.0 - cache.outputs[lu].array().square())).matrix();
        const auto lu1 = lu + 1;
        Eigen::Map<Eigen::MatrixXd> gw(grad.data() + offset(l), sizes_[lu1], sizes_[lu]);
        Eigen::Map<Eigen::VectorXd> gb(grad.data() + offset(l) + static_cast<Eigen::Index>(sizes_[lu1]) * sizes_[lu],
                                       sizes_[lu1]);
        gw.noalias() += delta * cache.inputs[lu].transpose();
        gb += delta.rowwise().sum();
        delta = weight(l).transpose() * delta;
    }
    return delta;
}

// ---------------------------------------------------------------------------
// Gaussian policy

double quantize_logstd(double v) {
    const double clamped = std::clamp(v, kMinLogstd, kMaxLogstd);
    return std::round(clamped / kLogstdQuantum) * kLogstdQuantum;
}

GaussianPolicy GaussianPolicy::create(int obs_dim, int action_dim, const std::vector<int>& hidden, Rng& rng,
                                      double initial_logstd, Activation activation) {
    GaussianPolicy p;
    p.mean_net = Mlp::create(obs_dim, hidden, action_dim, rng, activation, 0.01);
    p.set_logstd(Eigen::VectorXd::Constant(action_dim, initial_logstd));
    return p;
}

void GaussianPolicy::set_logstd(const Eigen::VectorXd& values) {
    if (values.size() != action_dim()) throw InvalidArgument("logstd length must equal the action dimension");
    logstd = values.unaryExpr([](double v) { return quantize_logstd(v); });
}

double gaussian_logprob(const Eigen::VectorXd& mean, const Eigen::VectorXd& logstd, const Eigen::VectorXd& action) {
    const double half_log_2pi = 0.5 * std::log(2.0 * std::numbers::pi);
    double lp = 0.0;
    for (Eigen::Index i = 0; i < mean.size(); ++i) {
        const double z = (action[i] - mean[i]) * std::exp(-logstd[i]);
        lp += -logstd[i] - half_log_2pi - 0.5 * z * z;
    }
    return lp;
}

ActionSample sample_action(const Eigen::VectorXd& mean, const Eigen::VectorXd& logstd, Rng& rng) {
    const double half_log_2pi = 0.5 * std::log(2.0 * std::numbers::pi);
    ActionSample s;
    s.action.resize(mean.size());
    for (Eigen::Index i = 0; i < mean.size(); ++i) {
        const double eps = normal(rng);
        s.action[i] = mean[i] + std::exp(logstd[i]) * eps;
        s.logprob += -logstd[i] - half_log_2pi - 0.5 * eps * eps;
    }
    return s;
}

ActionSample sample_action(const GaussianPolicy& policy, const Eigen::VectorXd& obs, Rng& rng) {
    return sample_action(policy.mean(obs), policy.logstd, rng);
}

double VarianceSchedule::target(int iteration) const {
    const double frac = static_cast<double>(iteration) / static_cast<double>(iterations);
    return logstd_0 + frac * (logstd_final - logstd_0);
}

void VarianceSchedule::validate() const {
    if (iterations < 1) throw InvalidArgument("variance schedule length must be at least 1");
    if (!std::isfinite(logstd_0) || !std::isfinite(logstd_final)) throw InvalidArgument("variance targets must be finite");
}

void apply_variance_control(Eigen::VectorXd& logstd, int iteration, const VarianceSchedule& schedule) {
    if (!schedule.enabled || iteration >= schedule.iterations || logstd.size() == 0) return;
    const double shift = quantize_logstd(schedule.target(iteration) - logstd.mean());
    logstd.array() += shift;
}

void apply_variance_control(Eigen::VectorXd& logstd, const Eigen::VectorXd& step, int iteration,
                            const VarianceSchedule& schedule) {
    logstd = (logstd + step).unaryExpr([](double v) { return quantize_logstd(v); });
    apply_variance_control(logstd, iteration, schedule);
}

// ---------------------------------------------------------------------------
// Adam

Adam::Adam(Eigen::Index size, const AdamConfig& config)
    : config_(config), m_(Eigen::VectorXd::Zero(size)), v_(Eigen::VectorXd::Zero(size)) {}

Eigen::VectorXd Adam::step(const Eigen::VectorXd& grad) {
    if (grad.size() != m_.size()) throw InvalidArgument("gradient size does not match the optimizer");
    Eigen::VectorXd g = grad;
    if (config_.max_grad_norm > 0.0) {
        const double n = g.norm();
        if (n > config_.max_grad_norm) g *= config_.max_grad_norm / n;
    }
    ++t_;
    m_ = config_.beta1 * m_ + (1.0 - config_.beta1) * g;
    v_ = config_.beta2 * v_ + (1.0 - config_.beta2) * g.cwiseProduct(g);
    const double c1 = 1.0 - std::pow(config_.beta1, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(config_.beta2, static_cast<double>(t_));
    return (-config_.lr * (m_ / c1).array() / ((v_ / c2).array().sqrt() + config_.epsilon)).matrix();
}

// ---------------------------------------------------------------------------
// normalizer

RunningNormalizer::RunningNormalizer(Eigen::Index dim)
    : mean(Eigen::VectorXd::Zero(dim)), m2(Eigen::VectorXd::Zero(dim)) {}

void RunningNormalizer::update(const Eigen::MatrixXd& batch) {
    if (batch.cols() == 0) return;
    if (batch.rows() != dim()) throw InvalidArgument("normalizer dimension mismatch");
    const double n = static_cast<double>(batch.cols());
    const Eigen::VectorXd batch_mean = batch.rowwise().mean();
    const Eigen::VectorXd batch_m2 = (batch.colwise() - batch_mean).array().square().rowwise().sum();
    const double total = count + n;
    const Eigen::VectorXd delta = batch_mean - mean;
    mean += delta * (n / total);
    m2 += batch_m2 + delta.cwiseProduct(delta) * (count * n / total);
    count = total;
}

Eigen::VectorXd RunningNormalizer::stddev() const {
    if (count < 2.0) return Eigen::VectorXd::Ones(dim());
    return (m2 / count).array().sqrt().max(1e-6).matrix();
}

Eigen::MatrixXd RunningNormalizer::normalize(const Eigen::MatrixXd& batch) const {
    const Eigen::VectorXd inv = stddev().cwiseInverse();
    Eigen::MatrixXd out = (batch.colwise() - mean).array().colwise() * inv.array();
    return out.cwiseMax(-clip).cwiseMin(clip);
}

// ---------------------------------------------------------------------------
// checkpoint container

namespace {

template <typename T>
void write_le(std::string& out, T value) {
    static_assert(std::is_trivially_copyable_v<T>);
    unsigned char bytes[sizeof(T)];
    std::memcpy(bytes, &value, sizeof(T));
    if constexpr (std::endian::native == std::endian::big) std::reverse(bytes, bytes + sizeof(T));
    out.append(reinterpret_cast<const char*>(bytes), sizeof(T));
}

struct Reader {
    std::string_view bytes;
    std::size_t pos = 0;

    template <typename T>
    T read() {
        if (pos + sizeof(T) > bytes.size()) throw ParseError("checkpoint truncated at byte " + std::to_string(pos));
        unsigned char raw[sizeof(T)];
        std::memcpy(raw, bytes.data() + pos, sizeof(T));
        if constexpr (std::endian::native == std::endian::big) std::reverse(raw, raw + sizeof(T));
        pos += sizeof(T);
        T value;
        std::memcpy(&value, raw, sizeof(T));
        return value;
    }

    std::string_view take(std::size_t n) {
        if (pos + n > bytes.size()) throw ParseError("checkpoint truncated at byte " + std::to_string(pos));
        const auto s = bytes.substr(pos, n);
        pos += n;
        return s;
    }
};

}  // namespace

void TensorArchive::put(const std::string& name, const Eigen::MatrixXd& m) {
    Tensor t;
    t.shape = {m.rows(), m.cols()};
    t.data.assign(m.data(), m.data() + m.size());
    tensors_[name] = std::move(t);
}

void TensorArchive::put(const std::string& name, const Eigen::VectorXd& v) {
    Tensor t;
    t.shape = {v.size()};
    t.data.assign(v.data(), v.data() + v.size());
    tensors_[name] = std::move(t);
}

void TensorArchive::put(const std::string& name, double value) { tensors_[name] = Tensor{{}, {value}}; }

void TensorArchive::put(const std::string& name, const std::vector<int>& values) {
    Tensor t;
    t.shape = {static_cast<std::int64_t>(values.size())};
    t.data.assign(values.begin(), values.end());
    tensors_[name] = std::move(t);
}

const Tensor& TensorArchive::at(const std::string& name) const {
    const auto it = tensors_.find(name);
    if (it == tensors_.end()) throw ParseError("checkpoint has no tensor '" + name + "'");
    return it->second;
}

Eigen::VectorXd TensorArchive::vector(const std::string& name) const {
    const Tensor& t = at(name);
    return Eigen::Map<const Eigen::VectorXd>(t.data.data(), static_cast<Eigen::Index>(t.data.size()));
}

double TensorArchive::scalar(const std::string& name) const {
    const Tensor& t = at(name);
    if (t.data.size() != 1) throw ParseError("tensor '" + name + "' is not a scalar");
    return t.data[0];
}

std::vector<int> TensorArchive::ints(const std::string& name) const {
    const Tensor& t = at(name);
    std::vector<int> out;
    for (double d : t.data) out.push_back(static_cast<int>(d));
    return out;
}

std::string TensorArchive::serialize() const {
    std::string out(kCheckpointMagic);
    write_le<std::uint32_t>(out, kCheckpointVersion);
    write_le<std::uint32_t>(out, static_cast<std::uint32_t>(tensors_.size()));
    for (const auto& [name, t] : tensors_) {
        write_le<std::uint32_t>(out, static_cast<std::uint32_t>(name.size()));
        out += name;
        write_le<std::uint32_t>(out, static_cast<std::uint32_t>(t.shape.size()));
        for (auto d : t.shape) write_le<std::int64_t>(out, d);
        write_le<std::uint64_t>(out, t.data.size());
        for (double v : t.data) write_le<double>(out, v);
    }
    return out;
}

TensorArchive TensorArchive::deserialize(std::string_view bytes) {
    Reader r{bytes};
    if (r.take(kCheckpointMagic.size()) != kCheckpointMagic) throw ParseError("not a checkpoint (bad magic)");
    const auto version = r.read<std::uint32_t>();
    if (version != kCheckpointVersion) throw ParseError("unsupported checkpoint version " + std::to_string(version));
    const auto count = r.read<std::uint32_t>();
    TensorArchive ar;
    for (std::uint32_t i = 0; i < count; ++i) {
        const auto name_len = r.read<std::uint32_t>();
        const std::string name(r.take(name_len));
        Tensor t;
        const auto rank = r.read<std::uint32_t>();
        std::int64_t expected = 1;
        for (std::uint32_t k = 0; k < rank; ++k) {
            t.shape.push_back(r.read<std::int64_t>());
            expected *= t.shape.back();
        }
        const auto n = r.read<std::uint64_t>();
        if (static_cast<std::int64_t>(n) != expected) throw ParseError("tensor '" + name + "' shape/data mismatch");
        if (n > (bytes.size() - r.pos) / sizeof(double)) throw ParseError("checkpoint truncated in '" + name + "'");
        t.data.resize(n);
        for (auto& v : t.data) v = r.read<double>();
        ar.tensors_[name] = std::move(t);
    }
    if (r.pos != bytes.size()) throw ParseError("trailing bytes after checkpoint");
    return ar;
}

void TensorArchive::save(const std::filesystem::path& path) const {
    const auto tmp = path.string() + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary);
        if (!out) throw Error("cannot write " + tmp);
        const std::string bytes = serialize();
        out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
        if (!out) throw Error("cannot write " + tmp);
    }
    std::filesystem::rename(tmp, path);
}

TensorArchive TensorArchive::load(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error("cannot open " + path.string());
    std::stringstream ss;
    ss << in.rdbuf();
    return deserialize(ss.str());
}

void store(TensorArchive& ar, const std::string& prefix, const Mlp& net) {
    ar.put(prefix + ".sizes", net.sizes());
    ar.put(prefix + ".activation", net.activation() == Activation::tanh ? 0.0 : 1.0);
    ar.put(prefix + ".params", net.params());
}

Mlp restore_mlp(const TensorArchive& ar, const std::string& prefix) {
    Mlp net(ar.ints(prefix + ".sizes"), ar.scalar(prefix + ".activation") == 0.0 ? Activation::tanh : Activation::linear);
    const Eigen::VectorXd p = ar.vector(prefix + ".params");
    if (p.size() != net.num_params()) throw ParseError("parameter count mismatch for '" + prefix + "'");
    net.params() = p;
    return net;
}

void store(TensorArchive& ar, const std::string& prefix, const GaussianPolicy& policy) {
    store(ar, prefix + ".mean", policy.mean_net);
    ar.put(prefix + ".logstd", policy.logstd);
}

GaussianPolicy restore_policy(const TensorArchive& ar, const std::string& prefix) {
    GaussianPolicy p;
    p.mean_net = restore_mlp(ar, prefix + ".mean");
    p.set_logstd(ar.vector(prefix + ".logstd"));
    return p;
}

void store(TensorArchive& ar, const std::string& prefix, const Adam& opt) {
    ar.put(prefix + ".m", opt.m());
    ar.put(prefix + ".v", opt.v());
    ar.put(prefix + ".t", static_cast<double>(opt.t()));
}

Adam restore_adam(const TensorArchive& ar, const std::string& prefix, const AdamConfig& config) {
    const Eigen::VectorXd m = ar.vector(prefix + ".m");
    Adam opt(m.size(), config);
    opt.m() = m;
    opt.v() = ar.vector(prefix + ".v");
    opt.t() = static_cast<std::int64_t>(ar.scalar(prefix + ".t"));
    if (opt.v().size() != m.size()) throw ParseError("optimizer state mismatch for '" + prefix + "'");
    return opt;
}

void store(TensorArchive& ar, const std::string& prefix, const RunningNormalizer& norm) {
    ar.put(prefix + ".mean", norm.mean);
    ar.put(prefix + ".m2", norm.m2);
    ar.put(prefix + ".count", norm.count);
    ar.put(prefix + ".clip", norm.clip);
}

RunningNormalizer restore_normalizer(const TensorArchive& ar, const std::string& prefix) {
    RunningNormalizer n;
    n.mean = ar.vector(prefix + ".mean");
    n.m2 = ar.vector(prefix + ".m2");
    n.count = ar.scalar(prefix + ".count");
    n.clip = ar.scalar(prefix + ".clip");
    return n;
}

}  // namespace unicon
