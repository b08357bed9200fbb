#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "unicon/random.hpp"

namespace unicon {

enum class Activation { tanh, linear };

Activation activation_from(std::string_view name);
std::string_view activation_name(Activation a);

/// Values cached by a batched forward pass, one column per sample.
struct MlpCache {
    std::vector<Eigen::MatrixXd> inputs;  ///< input of each layer
    std::vector<Eigen::MatrixXd> outputs; ///< output of each layer after its nonlinearity
};

/// Fully connected network; hidden layers use the activation, the output layer is linear.
/// Parameters live in one flat vector: for each layer W (out x in, column-major) then b.
class Mlp {
public:
    Mlp() = default;
    Mlp(std::vector<int> layer_sizes, Activation activation);

    /// Orthogonal init with gain sqrt(2) on hidden layers and `output_gain` on the last layer; zero biases.
    static Mlp create(int inputs, const std::vector<int>& hidden, int outputs, Rng& rng,
                      Activation activation = Activation::tanh, double output_gain = 0.01);

    int input_size() const { return sizes_.front(); }
    int output_size() const { return sizes_.back(); }
    int num_layers() const { return static_cast<int>(sizes_.size()) - 1; }
    const std::vector<int>& sizes() const { return sizes_; }
    Activation activation() const { return activation_; }
    Eigen::Index num_params() const { return params_.size(); }

    Eigen::VectorXd& params() { return params_; }
    const Eigen::VectorXd& params() const { return params_; }

    Eigen::Map<Eigen::MatrixXd> weight(int layer);
    Eigen::Map<const Eigen::MatrixXd> weight(int layer) const;
    Eigen::Map<Eigen::VectorXd> bias(int layer);
    Eigen::Map<const Eigen::VectorXd> bias(int layer) const;

    Eigen::VectorXd forward(const Eigen::VectorXd& x) const;
    /// Batched forward; `x` holds one sample per column.
    Eigen::MatrixXd forward(const Eigen::MatrixXd& x, MlpCache* cache) const;
    /// Accumulates d(loss)/d(params) into `grad` given d(loss)/d(output); returns d(loss)/d(input).
    Eigen::MatrixXd backward(const MlpCache& cache, const Eigen::MatrixXd& d_output, Eigen::VectorXd& grad) const;

private:
    Eigen::Index offset(int layer) const { return offsets_[static_cast<std::size_t>(layer)]; }

    std::vector<int> sizes_;
    Activation activation_ = Activation::tanh;
    std::vector<Eigen::Index> offsets_;
    Eigen::VectorXd params_;
};

/// Log-std values live on a 2^-40 grid. A common shift by a grid value is then
/// exact in floating point, so pairwise differences survive the controller bit for bit.
inline constexpr double kLogstdQuantum = 0x1p-40;
inline constexpr double kMinLogstd = -30.0;
inline constexpr double kMaxLogstd = 5.0;
double quantize_logstd(double v);

struct ActionSample {
    Eigen::VectorXd action;
    double logprob = 0.0;
};

/// Diagonal Gaussian over normalized actions; the mean comes from an MLP.
struct GaussianPolicy {
    Mlp mean_net;
    Eigen::VectorXd logstd;

    static GaussianPolicy create(int obs_dim, int action_dim, const std::vector<int>& hidden, Rng& rng,
                                 double initial_logstd = -1.0, Activation activation = Activation::tanh);

    int action_dim() const { return mean_net.output_size(); }
    int obs_dim() const { return mean_net.input_size(); }
    Eigen::VectorXd mean(const Eigen::VectorXd& obs) const { return mean_net.forward(obs); }
    /// Sets logstd from arbitrary values, snapping them to the grid and the allowed range.
    void set_logstd(const Eigen::VectorXd& values);
};

/// log N(action; mean, diag(exp(logstd))^2).
double gaussian_logprob(const Eigen::VectorXd& mean, const Eigen::VectorXd& logstd, const Eigen::VectorXd& action);
/// Draws mean + sigma * eps with eps from two Box-Muller draws per component.
ActionSample sample_action(const Eigen::VectorXd& mean, const Eigen::VectorXd& logstd, Rng& rng);
ActionSample sample_action(const GaussianPolicy& policy, const Eigen::VectorXd& obs, Rng& rng);

struct VarianceSchedule {
    double logstd_0 = -1.0;
    double logstd_final = -3.0;
    int iterations = 1000;  ///< L
    bool enabled = true;

    double target(int iteration) const;
    void validate() const;
};

/// Z operation: while iteration < L, adds one grid-aligned scalar to every
/// component so the mean equals the scheduled target. No-op afterwards or when disabled.
void apply_variance_control(Eigen::VectorXd& logstd, int iteration, const VarianceSchedule& schedule);
/// Gradient step (already scaled, e.g. an optimizer delta) followed by the Z operation.
void apply_variance_control(Eigen::VectorXd& logstd, const Eigen::VectorXd& step, int iteration,
                            const VarianceSchedule& schedule);

struct AdamConfig {
    double lr = 3e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
    double max_grad_norm = 1.0;  ///< global-norm clip; <= 0 disables
};

class Adam {
public:
    Adam() = default;
    Adam(Eigen::Index size, const AdamConfig& config);

    /// Parameter delta to add for gradient `grad` of a loss being minimized.
    Eigen::VectorXd step(const Eigen::VectorXd& grad);

    const AdamConfig& config() const { return config_; }
    void set_lr(double lr) { config_.lr = lr; }
    Eigen::VectorXd& m() { return m_; }
    Eigen::VectorXd& v() { return v_; }
    std::int64_t& t() { return t_; }
    const Eigen::VectorXd& m() const { return m_; }
    const Eigen::VectorXd& v() const { return v_; }
    std::int64_t t() const { return t_; }

private:
    AdamConfig config_;
    Eigen::VectorXd m_;
    Eigen::VectorXd v_;
    std::int64_t t_ = 0;
};

/// Running mean/variance (parallel Welford merge) for observation scaling.
struct RunningNormalizer {
    Eigen::VectorXd mean;
    Eigen::VectorXd m2;
    double count = 0.0;
    double clip = 10.0;

    explicit RunningNormalizer(Eigen::Index dim = 0);
    Eigen::Index dim() const { return mean.size(); }
    /// Adds one sample per column.
    void update(const Eigen::MatrixXd& batch);
    Eigen::VectorXd stddev() const;
    Eigen::MatrixXd normalize(const Eigen::MatrixXd& batch) const;
};

/// Named little-endian float64 tensors in one binary container.
struct Tensor {
    std::vector<std::int64_t> shape;
    std::vector<double> data;
};

class TensorArchive {
public:
    void put(const std::string& name, const Eigen::MatrixXd& m);
    void put(const std::string& name, const Eigen::VectorXd& v);
    void put(const std::string& name, double value);
    void put(const std::string& name, const std::vector<int>& values);

    bool contains(const std::string& name) const { return tensors_.count(name) != 0; }
    const Tensor& at(const std::string& name) const;
    Eigen::VectorXd vector(const std::string& name) const;
    double scalar(const std::string& name) const;
    std::vector<int> ints(const std::string& name) const;

    std::string serialize() const;
    static TensorArchive deserialize(std::string_view bytes);
    void save(const std::filesystem::path& path) const;
    static TensorArchive load(const std::filesystem::path& path);

    const std::map<std::string, Tensor>& tensors() const { return tensors_; }

private:
    std::map<std::string, Tensor> tensors_;
};

inline constexpr std::string_view kCheckpointMagic = "UNICKPT1";
inline constexpr std::uint32_t kCheckpointVersion = 1;

void store(TensorArchive& ar, const std::string& prefix, const Mlp& net);
Mlp restore_mlp(const TensorArchive& ar, const std::string& prefix);
void store(TensorArchive& ar, const std::string& prefix, const GaussianPolicy& policy);
GaussianPolicy restore_policy(const TensorArchive& ar, const std::string& prefix);
void store(TensorArchive& ar, const std::string& prefix, const Adam& opt);
Adam restore_adam(const TensorArchive& ar, const std::string& prefix, const AdamConfig& config);
void store(TensorArchive& ar, const std::string& prefix, const RunningNormalizer& norm);
RunningNormalizer restore_normalizer(const TensorArchive& ar, const std::string& prefix);

}  // namespace unicon
