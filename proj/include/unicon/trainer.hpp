#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "unicon/env.hpp"
#include "unicon/policy.hpp"
#include "unicon/sampler.hpp"

namespace unicon {

enum class KlDirection {
    new_old,  ///< KL(pi || pi_old)
    old_new,  ///< KL(pi_old || pi)
};

KlDirection kl_direction_from(std::string_view name);
std::string_view kl_direction_name(KlDirection d);

struct PpoConfig {
    int workers = 32;
    int samples_per_worker = 64;
    double beta = 0.5;
    KlDirection kl_direction = KlDirection::new_old;
    bool adaptive_kl = false;
    double kl_target = 0.01;  ///< adaptive mode doubles/halves beta around this
    int epochs = 5;
    int minibatches = 4;
    double gamma = 0.95;
    double lambda = 0.95;
    bool normalize_advantages = true;
    bool normalize_observations = false;
    AdamConfig policy_optimizer;
    AdamConfig value_optimizer{1e-3, 0.9, 0.999, 1e-8, 1.0};
    std::vector<int> hidden{1024, 1024, 1024};
    Activation activation = Activation::tanh;
    int threads = 1;

    void validate() const;
};

struct TrainConfig {
    PpoConfig ppo;
    RsisConfig rsis;
    VarianceSchedule variance;
    TaskConfig task;
    AblationConfig ablation;
    int iterations = 1000;
    std::uint64_t seed = 1;
    int checkpoint_every = 50;  ///< 0 disables periodic checkpoints

    void validate() const;
};

/// Transitions stored worker-major: index = worker * steps + t.
struct RolloutBatch {
    int workers = 0;
    int steps = 0;
    Eigen::MatrixXd observations;  ///< obs_dim x N (after normalization, as fed to the nets)
    Eigen::MatrixXd actions;       ///< action_dim x N
    Eigen::MatrixXd old_means;     ///< action_dim x N under the collecting snapshot
    Eigen::VectorXd old_logstd;
    Eigen::VectorXd logprobs;      ///< under the collecting snapshot
    Eigen::VectorXd rewards;
    Eigen::VectorXd values;
    Eigen::VectorXd next_values;   ///< V(s') for bootstrapping, 0 after a terminal step
    std::vector<std::uint8_t> boundaries;  ///< episode or segment ends after this transition
    Eigen::VectorXd advantages;
    Eigen::VectorXd returns;
    bool advantages_normalized = false;

    Eigen::Index size() const { return rewards.size(); }
};

struct GaeResult {
    Eigen::VectorXd advantages;
    Eigen::VectorXd returns;
};

/// A_t = delta_t + gamma * lambda * A_{t+1} (reset at boundaries), delta_t = r_t + gamma * V'_t - V_t.
GaeResult compute_gae(const Eigen::VectorXd& rewards, const Eigen::VectorXd& values,
                      const Eigen::VectorXd& next_values, const std::vector<std::uint8_t>& boundaries, double gamma,
                      double lambda);

struct Objective {
    double value = 0.0;      ///< mean(ratio * A - beta * KL)
    double surrogate = 0.0;  ///< mean(ratio * A)
    double kl = 0.0;         ///< mean KL
    Eigen::VectorXd grad;    ///< d(value)/d[mean-net params, logstd]
};

double gaussian_kl(const Eigen::VectorXd& mean, const Eigen::VectorXd& logstd, const Eigen::VectorXd& old_mean,
                   const Eigen::VectorXd& old_logstd, KlDirection direction);

/// Penalized surrogate over the transitions in `indices`; uses batch.advantages.
Objective ppo_objective(const GaussianPolicy& policy, const RolloutBatch& batch, std::span<const Eigen::Index> indices,
                        double beta, KlDirection direction, bool with_gradient = true);

struct EpisodeStats {
    double reward_sum = 0.0;
    int length = 0;
    EndCause cause = EndCause::none;
    std::string term;  ///< violated term for term_violation
    std::size_t clip = 0;
};

struct IterationMetrics {
    int iteration = 0;
    std::size_t transitions = 0;
    double mean_step_reward = 0.0;
    std::array<double, kNumRewardTerms> term_means{};
    std::size_t episodes = 0;                 ///< finished episodes (cut segments excluded)
    double episode_reward_mean = 0.0;         ///< mean per-step reward of finished episodes
    double episode_return_mean = 0.0;         ///< mean reward sum of finished episodes
    double episode_length_mean = 0.0;
    std::map<std::string, std::size_t> causes;  ///< "clip_end", "term_violation:qj", ...
    std::vector<std::size_t> clip_counts;       ///< episodes started per clip
    double kl = 0.0;
    double surrogate = 0.0;
    double value_loss = 0.0;
    double beta = 0.0;
    double logstd_mean = 0.0;
    bool update_skipped = false;
    double seconds = 0.0;

    /// One line of the metrics log.
    std::string to_json() const;
};

struct UpdateMetrics {
    double kl = 0.0;
    double surrogate = 0.0;
    double value_loss = 0.0;
    bool skipped = false;
};

/// PPO over a set of clips tracked by one character model.
class Trainer {
public:
    Trainer(CharacterModel model, std::vector<MotionClip> clips, TrainConfig config);

    /// Rollout with the current snapshot; fills episode statistics into `metrics` when given.
    RolloutBatch collect(int iteration, IterationMetrics* metrics = nullptr);
    /// GAE, advantage normalization, `epochs` passes of minibatch updates, then the variance controller.
    UpdateMetrics update(RolloutBatch& batch, int iteration);
    IterationMetrics run_iteration();
    /// Runs until `config.iterations`, appending a JSON line per iteration to `metrics`.
    /// Writes `checkpoint.bin` (and periodic copies) under `out_dir` when it is non-empty.
    void train(std::ostream* metrics, const std::filesystem::path& out_dir = {},
               const std::function<void(const IterationMetrics&)>& on_iteration = {});

    TensorArchive checkpoint() const;
    void save_checkpoint(const std::filesystem::path& path) const;
    /// Restores nets, optimizers, normalizer, beta and the iteration counter.
    void load_checkpoint(const TensorArchive& archive);
    /// Copies policy, value net and normalizer only; shapes must match.
    void warm_start(const TensorArchive& archive);

    const GaussianPolicy& policy() const { return policy_; }
    GaussianPolicy& policy() { return policy_; }
    const Mlp& value_net() const { return value_; }
    const RunningNormalizer* normalizer() const { return config_.ppo.normalize_observations ? &normalizer_ : nullptr; }
    const TrainConfig& config() const { return config_; }
    const SamplingTable& table() const { return table_; }
    const std::vector<MotionClip>& clips() const { return clips_; }
    const CharacterModel& model() const { return model_; }
    int iteration() const { return iteration_; }
    std::size_t observation_size() const { return obs_dim_; }
    double beta() const { return beta_; }

private:
    CharacterModel model_;
    std::vector<MotionClip> clips_;
    TrainConfig config_;
    SamplingTable table_;
    std::vector<TrackingEnv> envs_;
    std::size_t obs_dim_ = 0;
    GaussianPolicy policy_;
    Mlp value_;
    Adam policy_opt_;
    Adam value_opt_;
    RunningNormalizer normalizer_;
    double beta_ = 0.5;
    int iteration_ = 0;
};

/// Zero-shot perturbation protocol.
struct EvalProtocol {
    double speed_ratio = 1.0;
    int impulse_period = 0;          ///< steps between impulses; 0 disables
    double impulse_magnitude = 0.0;  ///< N s, horizontal, random direction
    int impulse_body = -1;           ///< -1 picks a random body
    double mass_scale = 1.0;

    bool is_clean() const { return speed_ratio == 1.0 && impulse_period == 0 && mass_scale == 1.0; }
    std::string label() const;
    void validate() const;
};

struct EvalResult {
    int episodes = 0;
    double mean_score = 0.0;        ///< reward sum / trackable steps, averaged over episodes
    double mean_step_reward = 0.0;  ///< reward sum / steps taken
    double term_violation_rate = 0.0;
    std::map<std::string, std::size_t> causes;
};

struct EvalOptions {
    int episodes = 4;
    std::uint64_t seed = 1;
    bool stochastic = false;  ///< sample actions instead of using the mean
    int start_frame = 0;
};

/// Runs episodes from `start_frame` of every clip to its end or termination.
EvalResult evaluate(const GaussianPolicy& policy, const RunningNormalizer* normalizer, const CharacterModel& model,
                    const std::vector<MotionClip>& clips, const TaskConfig& task, const AblationConfig& ablation,
                    const EvalProtocol& protocol, const EvalOptions& options);

struct ProtocolReport {
    EvalProtocol protocol;
    EvalResult clean;
    EvalResult perturbed;
    double relative = 1.0;  ///< perturbed / clean mean score
};

ProtocolReport evaluate_relative(const GaussianPolicy& policy, const RunningNormalizer* normalizer,
                                 const CharacterModel& model, const std::vector<MotionClip>& clips,
                                 const TaskConfig& task, const AblationConfig& ablation, const EvalProtocol& protocol,
                                 const EvalOptions& options);

/// The speed and impulse settings swept by `eval --sweep`.
std::vector<EvalProtocol> standard_sweep(double impulse_magnitude);

struct FinetuneReport {
    std::vector<double> scratch;  ///< per-iteration mean step reward
    std::vector<double> warm;
};

/// Paired runs on the same clips: from scratch and warm-started from `pretrained`.
FinetuneReport finetune(const TensorArchive& pretrained, const CharacterModel& model, std::vector<MotionClip> clips,
                        const TrainConfig& config, int iterations);

}  // namespace unicon
