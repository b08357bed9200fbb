#include "unicon/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <exception>
#include <fstream>
#include <limits>
#include <numbers>
#include <sstream>
#include <thread>

#include "json.hpp"
#include "unicon/error.hpp"

namespace unicon {

KlDirection kl_direction_from(std::string_view name) {
    if (name == "new_old") return KlDirection::new_old;
    if (name == "old_new") return KlDirection::old_new;
    throw InvalidArgument("unknown KL direction '" + std::string(name) + "'");
}

std::string_view kl_direction_name(KlDirection d) { return d == KlDirection::new_old ? "new_old" : "old_new"; }

void PpoConfig::validate() const {
    if (workers < 1 || samples_per_worker < 1) throw InvalidArgument("workers and samples per worker must be positive");
    if (!(beta >= 0.0)) throw InvalidArgument("beta must be non-negative");
    if (epochs < 1 || minibatches < 1) throw InvalidArgument("epochs and minibatches must be positive");
    if (minibatches > workers * samples_per_worker) throw InvalidArgument("more minibatches than transitions");
    if (!(gamma > 0.0 && gamma <= 1.0) || !(lambda > 0.0 && lambda <= 1.0))
        throw InvalidArgument("gamma and lambda must lie in (0, 1]");
    if (!(kl_target > 0.0)) throw InvalidArgument("KL target must be positive");
    if (!(policy_optimizer.lr > 0.0) || !(value_optimizer.lr > 0.0)) throw InvalidArgument("learning rates must be positive");
    for (int h : hidden)
        if (h < 1) throw InvalidArgument("hidden layer widths must be positive");
    if (threads < 1) throw InvalidArgument("threads must be at least 1");
}

void TrainConfig::validate() const {
    ppo.validate();
    rsis.validate();
    variance.validate();
    task.validate();
    ablation.validate();
    if (iterations < 0) throw InvalidArgument("iterations must be non-negative");
    if (checkpoint_every < 0) throw InvalidArgument("checkpoint interval must be non-negative");
}

// ---------------------------------------------------------------------------
// advantages and objective

GaeResult compute_gae(const Eigen::VectorXd& rewards, const Eigen::VectorXd& values,
                      const Eigen::VectorXd& next_values, const std::vector<std::uint8_t>& boundaries, double gamma,
                      double lambda) {
    const Eigen::Index n = rewards.size();
    if (values.size() != n || next_values.size() != n || static_cast<Eigen::Index>(boundaries.size()) != n)
        throw InvalidArgument("advantage inputs must have equal lengths");
    GaeResult r;
    r.advantages.resize(n);
    double running = 0.0;
    for (Eigen::Index t = n - 1; t >= 0; --t) {
        if (boundaries[static_cast<std::size_t>(t)]) running = 0.0;
        const double delta = rewards[t] + gamma * next_values[t] - values[t];
        running = delta + gamma * lambda * running;
        r.advantages[t] = running;
    }
    r.returns = r.advantages + values;
    return r;
}

double gaussian_kl(const Eigen::VectorXd& mean, const Eigen::VectorXd& logstd, const Eigen::VectorXd& old_mean,
                   const Eigen::VectorXd& old_logstd, KlDirection direction) {
    // KL(p || q) for p = N(mp, sp), q = N(mq, sq)
    const bool fwd = direction == KlDirection::new_old;
    const Eigen::VectorXd& mp = fwd ? mean : old_mean;
    const Eigen::VectorXd& lp = fwd ? logstd : old_logstd;
    const Eigen::VectorXd& mq = fwd ? old_mean : mean;
    const Eigen::VectorXd& lq = fwd ? old_logstd : logstd;
    double kl = 0.0;
    for (Eigen::Index d = 0; d < mean.size(); ++d) {
        const double vp = std::exp(2.0 * lp[d]);
        const double vq = std::exp(2.0 * lq[d]);
        const double dm = mp[d] - mq[d];
        kl += lq[d] - lp[d] + (vp + dm * dm) / (2.0 * vq) - 0.5;
    }
    return kl;
}

Objective ppo_objective(const GaussianPolicy& policy, const RolloutBatch& batch, std::span<const Eigen::Index> indices,
                        double beta, KlDirection direction, bool with_gradient) {
    const auto n = static_cast<Eigen::Index>(indices.size());
    if (n == 0) throw InvalidArgument("empty minibatch");
    if (batch.advantages.size() != batch.size()) throw InvalidArgument("advantages have not been computed");
    const Eigen::Index act = policy.action_dim();
    Eigen::MatrixXd x(batch.observations.rows(), n);
    for (Eigen::Index i = 0; i < n; ++i) x.col(i) = batch.observations.col(indices[static_cast<std::size_t>(i)]);
    MlpCache cache;
    const Eigen::MatrixXd mu = policy.mean_net.forward(x, with_gradient ? &cache : nullptr);

    const Eigen::VectorXd& ls = policy.logstd;
    const Eigen::VectorXd& lso = batch.old_logstd;
    const Eigen::VectorXd var = (2.0 * ls).array().exp();
    const Eigen::VectorXd var_old = (2.0 * lso).array().exp();
    const bool fwd = direction == KlDirection::new_old;

    Objective out;
    Eigen::MatrixXd g_mu(act, n);
    Eigen::VectorXd g_ls = Eigen::VectorXd::Zero(act);
    for (Eigen::Index i = 0; i < n; ++i) {
        const Eigen::Index k = indices[static_cast<std::size_t>(i)];
        const Eigen::VectorXd m = mu.col(i);
        const Eigen::VectorXd a = batch.actions.col(k);
        const Eigen::VectorXd mo = batch.old_means.col(k);
        const double ratio = std::exp(gaussian_logprob(m, ls, a) - batch.logprobs[k]);
        const double adv = batch.advantages[k];
        const double kl = gaussian_kl(m, ls, mo, lso, direction);
        out.surrogate += ratio * adv;
        out.kl += kl;
        out.value += ratio * adv - beta * kl;
        if (!with_gradient) continue;
        for (Eigen::Index d = 0; d < act; ++d) {
            const double diff = a[d] - m[d];
            const double dlp_dmu = diff / var[d];
            const double dlp_dls = -1.0 + diff * diff / var[d];
            const double dm = m[d] - mo[d];
            const double dkl_dmu = fwd ? dm / var_old[d] : dm / var[d];
            const double dkl_dls = fwd ? -1.0 + var[d] / var_old[d] : 1.0 - (var_old[d] + dm * dm) / var[d];
            g_mu(d, i) = ratio * adv * dlp_dmu - beta * dkl_dmu;
            g_ls[d] += ratio * adv * dlp_dls - beta * dkl_dls;
        }
    }
    const double inv = 1.0 / static_cast<double>(n);
    out.value *= inv;
    out.surrogate *= inv;
    out.kl *= inv;
    if (with_gradient) {
        Eigen::VectorXd g_net;
        policy.mean_net.backward(cache, g_mu * inv, g_net);
        out.grad.resize(g_net.size() + act);
        out.grad << g_net, g_ls * inv;
    }
    return out;
}

// ---------------------------------------------------------------------------
// metrics

std::string IterationMetrics::to_json() const {
    nlohmann::ordered_json j;
    j["iteration"] = iteration;
    j["transitions"] = transitions;
    j["mean_step_reward"] = mean_step_reward;
    nlohmann::ordered_json terms;
    for (std::size_t i = 0; i < kNumRewardTerms; ++i) terms[std::string(kRewardTermNames[i])] = term_means[i];
    j["terms"] = terms;
    j["episodes"] = episodes;
    j["episode_reward_mean"] = episode_reward_mean;
    j["episode_return_mean"] = episode_return_mean;
    j["episode_length_mean"] = episode_length_mean;
    j["causes"] = causes;
    j["clip_counts"] = clip_counts;
    j["kl"] = kl;
    j["surrogate"] = surrogate;
    j["value_loss"] = value_loss;
    j["beta"] = beta;
    j["logstd_mean"] = logstd_mean;
    j["update_skipped"] = update_skipped;
    return j.dump();
}

namespace {

/// Runs f(i) for i in [0, n) on up to `threads` threads; rethrows the first failure.
template <typename F>
void parallel_for(int n, int threads, const F& f) {
    if (threads <= 1 || n <= 1) {
        for (int i = 0; i < n; ++i) f(i);
        return;
    }
    const int t = std::min(threads, n);
    std::vector<std::exception_ptr> errors(static_cast<std::size_t>(t));
    {
        std::vector<std::jthread> pool;
        for (int k = 0; k < t; ++k)
            pool.emplace_back([&, k] {
                try {
                    for (int i = k; i < n; i += t) f(i);
                } catch (...) {
                    errors[static_cast<std::size_t>(k)] = std::current_exception();
                }
            });
    }
    for (auto& e : errors)
        if (e) std::rethrow_exception(e);
}

std::string cause_key(EndCause cause, std::string_view term) {
    std::string key(end_cause_name(cause));
    if (cause == EndCause::term_violation) key += ":" + std::string(term);
    return key;
}

int lookahead_of(const TaskConfig& task, const AblationConfig& ablation) {
    return ablation.targets == TargetMode::next ? task.encoder.tau : ablation.k;
}

}  // namespace

// ---------------------------------------------------------------------------
// trainer

Trainer::Trainer(CharacterModel model, std::vector<MotionClip> clips, TrainConfig config)
    : model_(std::move(model)), clips_(std::move(clips)), config_(std::move(config)) {
    config_.validate();
    if (clips_.empty()) throw InvalidArgument("training needs at least one clip");
    const int needed = (config_.rsis.enabled ? config_.rsis.k_max : 1) + lookahead_of(config_.task, config_.ablation);
    std::vector<const MotionClip*> ptrs;
    std::vector<std::string> ids;
    for (const auto& c : clips_) {
        if (c.num_joints() != model_.num_joints())
            throw InvalidArgument("clip '" + c.id + "' does not match the character model");
        if (static_cast<int>(c.size()) <= needed)
            throw InvalidArgument("clip '" + c.id + "' is too short for the RSIS offsets");
        ptrs.push_back(&c);
        ids.push_back(c.id);
    }
    table_ = config_.ablation.balancer ? build_probability_table(LabelTree::from_clips(ptrs)) : build_uniform_table(ids);
    for (int w = 0; w < config_.ppo.workers; ++w)
        envs_.emplace_back(model_, config_.task, config_.ablation, clips_.size());
    obs_dim_ = envs_.front().observation_size();

    Rng init = stream_rng(config_.seed, 0x1417);
    const PpoConfig& p = config_.ppo;
    policy_ = GaussianPolicy::create(static_cast<int>(obs_dim_), model_.num_actuated(), p.hidden, init,
                                     config_.variance.logstd_0, p.activation);
    value_ = Mlp::create(static_cast<int>(obs_dim_), p.hidden, 1, init, p.activation, 1.0);
    policy_opt_ = Adam(policy_.mean_net.num_params() + policy_.action_dim(), p.policy_optimizer);
    value_opt_ = Adam(value_.num_params(), p.value_optimizer);
    normalizer_ = RunningNormalizer(static_cast<Eigen::Index>(obs_dim_));
    beta_ = p.beta;
}

RolloutBatch Trainer::collect(int iteration, IterationMetrics* metrics) {
    const int W = config_.ppo.workers;
    const int T = config_.ppo.samples_per_worker;
    const Eigen::Index N = static_cast<Eigen::Index>(W) * T;
    const Eigen::Index A = policy_.action_dim();
    const auto obs_dim = static_cast<Eigen::Index>(obs_dim_);
    const bool normalize = config_.ppo.normalize_observations;

    RolloutBatch b;
    b.workers = W;
    b.steps = T;
    b.observations.resize(obs_dim, N);
    b.actions.resize(A, N);
    b.old_means.resize(A, N);
    b.old_logstd = policy_.logstd;
    b.logprobs.resize(N);
    b.rewards.resize(N);
    b.values.resize(N);
    b.next_values = Eigen::VectorXd::Zero(N);
    b.boundaries.assign(static_cast<std::size_t>(N), 0);

    std::vector<Rng> rngs;
    for (int w = 0; w < W; ++w)
        rngs.push_back(stream_rng(config_.seed, (static_cast<std::uint64_t>(iteration) + 1) << 24 | static_cast<std::uint64_t>(w)));
    std::vector<EpisodeStats> running(static_cast<std::size_t>(W));
    std::vector<EpisodeStats> finished;
    std::vector<std::size_t> clip_counts(clips_.size(), 0);
    auto start_episode = [&](int w) {
        const std::size_t c = sample_index(table_, rngs[static_cast<std::size_t>(w)]);
        envs_[static_cast<std::size_t>(w)].reset(clips_[c], c, rngs[static_cast<std::size_t>(w)], config_.rsis);
        running[static_cast<std::size_t>(w)] = EpisodeStats{};
        running[static_cast<std::size_t>(w)].clip = c;
        ++clip_counts[c];
    };
    for (int w = 0; w < W; ++w) start_episode(w);

    Eigen::MatrixXd raw(obs_dim, W);
    Eigen::MatrixXd raw_all;
    if (normalize) raw_all.resize(obs_dim, N);
    std::vector<Eigen::Index> pending;  // transitions whose next value needs V(s')
    Eigen::MatrixXd pending_obs(obs_dim, N);
    std::vector<Eigen::VectorXd> actions(static_cast<std::size_t>(W));
    std::vector<StepResult> results(static_cast<std::size_t>(W));
    std::array<double, kNumRewardTerms> term_sums{};

    for (int t = 0; t < T; ++t) {
        for (int w = 0; w < W; ++w) envs_[static_cast<std::size_t>(w)].observation(raw.col(w));
        const Eigen::MatrixXd obs = normalize ? normalizer_.normalize(raw) : raw;
        const Eigen::MatrixXd means = policy_.mean_net.forward(obs, nullptr);
        const Eigen::MatrixXd values = value_.forward(obs, nullptr);
        for (int w = 0; w < W; ++w) {
            const Eigen::Index i = static_cast<Eigen::Index>(w) * T + t;
            ActionSample s = sample_action(means.col(w), policy_.logstd, rngs[static_cast<std::size_t>(w)]);
            b.observations.col(i) = obs.col(w);
            if (normalize) raw_all.col(i) = raw.col(w);
            b.old_means.col(i) = means.col(w);
            b.actions.col(i) = s.action;
            b.logprobs[i] = s.logprob;
            b.values[i] = values(0, w);
            actions[static_cast<std::size_t>(w)] = std::move(s.action);
        }
        parallel_for(W, config_.ppo.threads, [&](int w) {
            results[static_cast<std::size_t>(w)] =
                envs_[static_cast<std::size_t>(w)].step(actions[static_cast<std::size_t>(w)]);
        });
        for (int w = 0; w < W; ++w) {
            const auto wu = static_cast<std::size_t>(w);
            const Eigen::Index i = static_cast<Eigen::Index>(w) * T + t;
            const StepResult& r = results[wu];
            b.rewards[i] = r.reward.total;
            const auto tv = r.reward.terms.values();
            for (std::size_t k = 0; k < kNumRewardTerms; ++k) term_sums[k] += tv[k];
            EpisodeStats& ep = running[wu];
            ep.reward_sum += r.reward.total;
            ++ep.length;
            if (r.end != EndCause::none) {
                b.boundaries[static_cast<std::size_t>(i)] = 1;
                if (r.bootstrap()) {
                    envs_[wu].observation(pending_obs.col(static_cast<Eigen::Index>(pending.size())));
                    pending.push_back(i);
                }
                ep.cause = r.end;
                ep.term = std::string(r.violated_term);
                finished.push_back(ep);
                start_episode(w);
            } else if (t == T - 1) {
                b.boundaries[static_cast<std::size_t>(i)] = 1;
                envs_[wu].observation(pending_obs.col(static_cast<Eigen::Index>(pending.size())));
                pending.push_back(i);
            }
        }
    }
    for (Eigen::Index i = 0; i + 1 < N; ++i)
        if (!b.boundaries[static_cast<std::size_t>(i)]) b.next_values[i] = b.values[i + 1];
    if (!pending.empty()) {
        Eigen::MatrixXd po = pending_obs.leftCols(static_cast<Eigen::Index>(pending.size()));
        if (normalize) po = normalizer_.normalize(po);
        const Eigen::MatrixXd v = value_.forward(po, nullptr);
        for (std::size_t k = 0; k < pending.size(); ++k) b.next_values[pending[k]] = v(0, static_cast<Eigen::Index>(k));
    }
    if (normalize) normalizer_.update(raw_all);

    if (metrics) {
        IterationMetrics& m = *metrics;
        m.iteration = iteration;
        m.transitions = static_cast<std::size_t>(N);
        m.mean_step_reward = b.rewards.mean();
        for (std::size_t k = 0; k < kNumRewardTerms; ++k) m.term_means[k] = term_sums[k] / static_cast<double>(N);
        m.episodes = finished.size();
        m.clip_counts = clip_counts;
        double per_step = 0.0, ret = 0.0, len = 0.0;
        for (const auto& e : finished) {
            per_step += e.reward_sum / e.length;
            ret += e.reward_sum;
            len += e.length;
            ++m.causes[cause_key(e.cause, e.term)];
        }
        if (!finished.empty()) {
            const auto n = static_cast<double>(finished.size());
            m.episode_reward_mean = per_step / n;
            m.episode_return_mean = ret / n;
            m.episode_length_mean = len / n;
        }
    }
    return b;
}

UpdateMetrics Trainer::update(RolloutBatch& batch, int iteration) {
    const PpoConfig& p = config_.ppo;
    GaeResult gae = compute_gae(batch.rewards, batch.values, batch.next_values, batch.boundaries, p.gamma, p.lambda);
    batch.returns = gae.returns;
    batch.advantages = gae.advantages;
    if (p.normalize_advantages && batch.size() > 1) {
        const double mean = batch.advantages.mean();
        const double sd = std::sqrt((batch.advantages.array() - mean).square().mean());
        batch.advantages = (batch.advantages.array() - mean) / (sd + 1e-8);
        batch.advantages_normalized = true;
    }

    const GaussianPolicy policy_backup = policy_;
    const Mlp value_backup = value_;
    const Adam popt_backup = policy_opt_;
    const Adam vopt_backup = value_opt_;

    UpdateMetrics m;
    const Eigen::Index N = batch.size();
    const Eigen::Index P = policy_.mean_net.num_params();
    std::vector<Eigen::Index> order(static_cast<std::size_t>(N));
    for (Eigen::Index i = 0; i < N; ++i) order[static_cast<std::size_t>(i)] = i;
    Rng rng = stream_rng(config_.seed, (std::uint64_t{1} << 48) | static_cast<std::uint64_t>(iteration));
    double value_loss = 0.0;
    int value_batches = 0;
    for (int epoch = 0; epoch < p.epochs && !m.skipped; ++epoch) {
        // Fisher-Yates with our own draws so the order is identical on every standard library
        for (std::size_t i = order.size() - 1; i > 0; --i)
            std::swap(order[i], order[static_cast<std::size_t>(uniform_int(rng, 0, static_cast<std::int64_t>(i)))]);
        for (int mb = 0; mb < p.minibatches; ++mb) {
            const std::size_t lo = order.size() * static_cast<std::size_t>(mb) / static_cast<std::size_t>(p.minibatches);
            const std::size_t hi =
                order.size() * static_cast<std::size_t>(mb + 1) / static_cast<std::size_t>(p.minibatches);
            const std::span<const Eigen::Index> idx(order.data() + lo, hi - lo);

            const Objective obj = ppo_objective(policy_, batch, idx, beta_, p.kl_direction);
            if (!std::isfinite(obj.value) || !obj.grad.allFinite()) {
                m.skipped = true;
                break;
            }
            const Eigen::VectorXd delta = policy_opt_.step(-obj.grad);
            policy_.mean_net.params() += delta.head(P);
            policy_.set_logstd(policy_.logstd + delta.tail(policy_.action_dim()));

            Eigen::MatrixXd x(batch.observations.rows(), static_cast<Eigen::Index>(idx.size()));
            Eigen::VectorXd target(static_cast<Eigen::Index>(idx.size()));
            for (std::size_t k = 0; k < idx.size(); ++k) {
                x.col(static_cast<Eigen::Index>(k)) = batch.observations.col(idx[k]);
                target[static_cast<Eigen::Index>(k)] = batch.returns[idx[k]];
            }
            MlpCache cache;
            const Eigen::MatrixXd v = value_.forward(x, &cache);
            const Eigen::RowVectorXd err = v.row(0) - target.transpose();
            const double loss = 0.5 * err.squaredNorm() / static_cast<double>(idx.size());
            if (!std::isfinite(loss)) {
                m.skipped = true;
                break;
            }
            Eigen::VectorXd g;
            value_.backward(cache, err / static_cast<double>(idx.size()), g);
            value_.params() += value_opt_.step(g);
            value_loss += loss;
            ++value_batches;
        }
    }
    if (m.skipped || !policy_.mean_net.params().allFinite() || !value_.params().allFinite()) {
        policy_ = policy_backup;
        value_ = value_backup;
        policy_opt_ = popt_backup;
        value_opt_ = vopt_backup;
        m.skipped = true;
    }

    std::vector<Eigen::Index> all(order.begin(), order.end());
    std::sort(all.begin(), all.end());
    const Objective fin = ppo_objective(policy_, batch, all, beta_, p.kl_direction, false);
    m.kl = fin.kl;
    m.surrogate = fin.surrogate;
    m.value_loss = value_batches ? value_loss / value_batches : 0.0;

    if (p.adaptive_kl) {
        if (m.kl > 1.5 * p.kl_target) beta_ *= 2.0;
        else if (m.kl < p.kl_target / 1.5) beta_ *= 0.5;
        beta_ = std::clamp(beta_, 1e-4, 1e4);
    }
    if (config_.ablation.variance_control) apply_variance_control(policy_.logstd, iteration + 1, config_.variance);
    return m;
}

IterationMetrics Trainer::run_iteration() {
    const auto start = std::chrono::steady_clock::now();
    IterationMetrics m;
    RolloutBatch batch = collect(iteration_, &m);
    const UpdateMetrics u = update(batch, iteration_);
    m.kl = u.kl;
    m.surrogate = u.surrogate;
    m.value_loss = u.value_loss;
    m.update_skipped = u.skipped;
    m.beta = beta_;
    m.logstd_mean = policy_.logstd.mean();
    ++iteration_;
    m.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    return m;
}

void Trainer::train(std::ostream* metrics, const std::filesystem::path& out_dir,
                    const std::function<void(const IterationMetrics&)>& on_iteration) {
    if (!out_dir.empty()) std::filesystem::create_directories(out_dir);
    while (iteration_ < config_.iterations) {
        const IterationMetrics m = run_iteration();
        if (metrics) *metrics << m.to_json() << '\n' << std::flush;
        if (on_iteration) on_iteration(m);
        if (out_dir.empty()) continue;
        const bool periodic = config_.checkpoint_every > 0 && iteration_ % config_.checkpoint_every == 0;
        if (periodic || iteration_ == config_.iterations) {
            save_checkpoint(out_dir / "checkpoint.bin");
            if (periodic) {
                char name[32];
                std::snprintf(name, sizeof name, "checkpoint_%06d.bin", iteration_);
                save_checkpoint(out_dir / name);
            }
        }
    }
}

TensorArchive Trainer::checkpoint() const {
    TensorArchive ar;
    store(ar, "policy", policy_);
    store(ar, "value", value_);
    store(ar, "policy_opt", policy_opt_);
    store(ar, "value_opt", value_opt_);
    store(ar, "normalizer", normalizer_);
    ar.put("normalize_observations", config_.ppo.normalize_observations ? 1.0 : 0.0);
    ar.put("beta", beta_);
    ar.put("iteration", static_cast<double>(iteration_));
    ar.put("seed", static_cast<double>(config_.seed & ((std::uint64_t{1} << 52) - 1)));
    return ar;
}

void Trainer::save_checkpoint(const std::filesystem::path& path) const { checkpoint().save(path); }

void Trainer::warm_start(const TensorArchive& archive) {
    GaussianPolicy p = restore_policy(archive, "policy");
    Mlp v = restore_mlp(archive, "value");
    if (p.mean_net.sizes() != policy_.mean_net.sizes() || v.sizes() != value_.sizes())
        throw InvalidArgument("checkpoint network shapes do not match this configuration");
    if (archive.contains("normalizer.mean")) {
        RunningNormalizer n = restore_normalizer(archive, "normalizer");
        if (n.dim() != normalizer_.dim()) throw InvalidArgument("checkpoint normalizer does not match");
        normalizer_ = std::move(n);
    }
    policy_ = std::move(p);
    value_ = std::move(v);
}

void Trainer::load_checkpoint(const TensorArchive& archive) {
    warm_start(archive);
    policy_opt_ = restore_adam(archive, "policy_opt", config_.ppo.policy_optimizer);
    value_opt_ = restore_adam(archive, "value_opt", config_.ppo.value_optimizer);
    if (policy_opt_.m().size() != policy_.mean_net.num_params() + policy_.action_dim() ||
        value_opt_.m().size() != value_.num_params())
        throw InvalidArgument("checkpoint optimizer state does not match");
    beta_ = archive.scalar("beta");
    iteration_ = static_cast<int>(archive.scalar("iteration"));
}

// ---------------------------------------------------------------------------
// evaluation

std::string EvalProtocol::label() const {
    std::ostringstream s;
    if (is_clean()) return "clean";
    const char* sep = "";
    if (speed_ratio != 1.0) {
        s << "speed-" << speed_ratio;
        sep = " ";
    }
    if (impulse_period > 0) {
        s << sep << "impulse-" << impulse_period << "x" << impulse_magnitude;
        sep = " ";
    }
    if (mass_scale != 1.0) s << sep << "mass-" << mass_scale;
    return s.str();
}

void EvalProtocol::validate() const {
    if (!(speed_ratio >= kMinSpeedRatio && speed_ratio <= kMaxSpeedRatio))
        throw InvalidArgument("speed ratio must lie in [0.25, 4]");
    if (impulse_period < 0) throw InvalidArgument("impulse period must be non-negative");
    if (!(impulse_magnitude >= 0.0)) throw InvalidArgument("impulse magnitude must be non-negative");
    if (!(mass_scale >= 0.5 && mass_scale <= 2.0)) throw InvalidArgument("mass scale must lie in [0.5, 2]");
}

EvalResult evaluate(const GaussianPolicy& policy, const RunningNormalizer* normalizer, const CharacterModel& model,
                    const std::vector<MotionClip>& clips, const TaskConfig& task, const AblationConfig& ablation,
                    const EvalProtocol& protocol, const EvalOptions& options) {
    protocol.validate();
    if (options.episodes < 1) throw InvalidArgument("evaluation needs at least one episode");
    if (clips.empty()) throw InvalidArgument("evaluation needs at least one clip");
    TaskConfig t = task;
    t.horizon = std::numeric_limits<int>::max();
    CharacterModel m = protocol.mass_scale == 1.0 ? model : scale_mass(model, protocol.mass_scale);
    TrackingEnv env(m, t, ablation, clips.size());
    if (env.observation_size() != static_cast<std::size_t>(policy.obs_dim()))
        throw InvalidArgument("policy expects " + std::to_string(policy.obs_dim()) + " inputs, the task produces " +
                              std::to_string(env.observation_size()));

    EvalResult r;
    std::size_t violations = 0;
    for (std::size_t c = 0; c < clips.size(); ++c) {
        const MotionClip clip = protocol.speed_ratio == 1.0 ? clips[c] : resample_speed(clips[c], protocol.speed_ratio);
        for (int e = 0; e < options.episodes; ++e) {
            Rng rng = stream_rng(options.seed, c * 100003 + static_cast<std::size_t>(e));
            env.reset_at(clip, c, static_cast<std::size_t>(options.start_frame));
            double sum = 0.0;
            StepResult sr;
            Eigen::VectorXd obs(static_cast<Eigen::Index>(env.observation_size()));
            while (sr.end == EndCause::none) {
                if (protocol.impulse_period > 0 && env.steps() > 0 && env.steps() % protocol.impulse_period == 0) {
                    const int nb = static_cast<int>(m.num_bodies());
                    const int body = protocol.impulse_body >= 0 ? protocol.impulse_body
                                                                 : static_cast<int>(uniform_int(rng, 0, nb - 1));
                    const double angle = uniform(rng, 0.0, 2.0 * std::numbers::pi);
                    env.apply_impulse(body, Vec3{std::cos(angle), std::sin(angle), 0.0} * protocol.impulse_magnitude);
                }
                env.observation(obs);
                Eigen::VectorXd in = normalizer ? Eigen::VectorXd(normalizer->normalize(obs)) : obs;
                const Eigen::VectorXd mean = policy.mean(in);
                const Eigen::VectorXd action = options.stochastic ? sample_action(mean, policy.logstd, rng).action : mean;
                sr = env.step(action);
                sum += sr.reward.total;
            }
            ++r.causes[cause_key(sr.end, sr.violated_term)];
            if (sr.end == EndCause::term_violation) ++violations;
            r.mean_score += sum / static_cast<double>(env.available_steps());
            r.mean_step_reward += sum / env.steps();
            ++r.episodes;
        }
    }
    r.mean_score /= r.episodes;
    r.mean_step_reward /= r.episodes;
    r.term_violation_rate = static_cast<double>(violations) / r.episodes;
    return r;
}

ProtocolReport evaluate_relative(const GaussianPolicy& policy, const RunningNormalizer* normalizer,
                                 const CharacterModel& model, const std::vector<MotionClip>& clips,
                                 const TaskConfig& task, const AblationConfig& ablation, const EvalProtocol& protocol,
                                 const EvalOptions& options) {
    ProtocolReport rep;
    rep.protocol = protocol;
    rep.clean = evaluate(policy, normalizer, model, clips, task, ablation, EvalProtocol{}, options);
    rep.perturbed = protocol.is_clean() ? rep.clean
                                        : evaluate(policy, normalizer, model, clips, task, ablation, protocol, options);
    rep.relative = rep.clean.mean_score > 0.0 ? rep.perturbed.mean_score / rep.clean.mean_score : 0.0;
    return rep;
}

std::vector<EvalProtocol> standard_sweep(double impulse_magnitude) {
    std::vector<EvalProtocol> out;
    for (double s : {0.4, 0.5, 0.9, 1.1, 1.2, 1.6}) {
        EvalProtocol p;
        p.speed_ratio = s;
        out.push_back(p);
    }
    for (int period : {60, 5}) {
        EvalProtocol p;
        p.impulse_period = period;
        p.impulse_magnitude = impulse_magnitude;
        out.push_back(p);
    }
    for (double m : {0.8, 1.2}) {
        EvalProtocol p;
        p.mass_scale = m;
        out.push_back(p);
    }
    return out;
}

FinetuneReport finetune(const TensorArchive& pretrained, const CharacterModel& model, std::vector<MotionClip> clips,
                        const TrainConfig& config, int iterations) {
    TrainConfig cfg = config;
    cfg.iterations = iterations;
    Trainer scratch(model, clips, cfg);
    Trainer warm(model, std::move(clips), cfg);
    warm.warm_start(pretrained);
    FinetuneReport r;
    for (int i = 0; i < iterations; ++i) {
        r.scratch.push_back(scratch.run_iteration().mean_step_reward);
        r.warm.push_back(warm.run_iteration().mean_step_reward);
    }
    return r;
}

}  // namespace unicon
