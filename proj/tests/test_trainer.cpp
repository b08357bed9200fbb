#include <cmath>
#include <filesystem>
#include <numeric>
#include <sstream>
#include <vector>

#include "doctest.h"
#include "unicon/error.hpp"
#include "unicon/synth.hpp"
#include "unicon/trainer.hpp"

using namespace unicon;
using doctest::Approx;

namespace {

CharacterModel toy_model(int links = 1) {
    ChainOptions o;
    o.armature = 0.1;
    return build_chain(links, true, o);
}

TrainConfig toy_config() {
    TrainConfig c;
    c.ppo.workers = 4;
    c.ppo.samples_per_worker = 32;
    c.ppo.hidden = {16, 16};
    c.ppo.epochs = 2;
    c.ppo.minibatches = 2;
    c.task.action_scale = 0.25;
    c.iterations = 4;
    c.seed = 7;
    return c;
}

std::vector<MotionClip> toy_clips(const CharacterModel& m) {
    return {sinusoid_clip(m, "a", 0.3, 0.5, 0.0, 2.0), sinusoid_clip(m, "b", 0.2, 0.8, 0.5, 2.0)};
}

RolloutBatch toy_batch(int n, int obs, int act, std::uint64_t seed) {
    Rng rng(seed);
    RolloutBatch b;
    b.workers = 1;
    b.steps = n;
    auto fill = [&](Eigen::MatrixXd& m, Eigen::Index r, Eigen::Index c, double s) {
        m.resize(r, c);
        for (Eigen::Index j = 0; j < c; ++j)
            for (Eigen::Index i = 0; i < r; ++i) m(i, j) = uniform(rng, -s, s);
    };
    fill(b.observations, obs, n, 1.0);
    fill(b.actions, act, n, 1.0);
    fill(b.old_means, act, n, 0.3);
    b.old_logstd = Eigen::VectorXd::Constant(act, -0.5);
    b.old_logstd[0] = -0.75;
    b.logprobs.resize(n);
    for (int i = 0; i < n; ++i) b.logprobs[i] = gaussian_logprob(b.old_means.col(i), b.old_logstd, b.actions.col(i));
    b.advantages.resize(n);
    for (auto& a : b.advantages) a = uniform(rng, -1.0, 1.0);
    b.rewards = b.values = b.next_values = b.returns = Eigen::VectorXd::Zero(n);
    b.boundaries.assign(static_cast<std::size_t>(n), 0);
    return b;
}

GaussianPolicy toy_policy(int obs, int act, std::uint64_t seed) {
    GaussianPolicy p;
    p.mean_net = Mlp({obs, 5, act}, Activation::tanh);
    Rng rng(seed);
    for (auto& v : p.mean_net.params()) v = uniform(rng, -0.6, 0.6);
    p.logstd = Eigen::VectorXd::Constant(act, -0.6);
    p.logstd[1] = -0.4;
    return p;
}

double score(const Trainer& t) {
    return evaluate(t.policy(), t.normalizer(), t.model(), t.clips(), t.config().task, t.config().ablation, {},
                    {1, 1})
        .mean_score;
}

}  // namespace

TEST_CASE("rsis without offsets or noise is plain initialization") {
    const auto m = toy_model(2);
    const auto clip = sinusoid_clip(m, "s", 0.3, 0.5, 0.2, 1.0);
    RsisConfig cfg;
    cfg.enabled = false;
    Rng rng(1);
    for (int i = 0; i < 200; ++i) {
        const RsisStart s = rsis_init(clip, rng, cfg);
        CHECK(s.state == clip.frames[s.frame]);
        CHECK(s.first_target == s.frame + 1);
        CHECK(s.first_target < clip.size());
    }
}

TEST_CASE("rsis offsets and noise stay in range") {
    const auto m = toy_model(2);
    const auto clip = sinusoid_clip(m, "s", 0.3, 0.5, 0.2, 1.0);
    RsisConfig cfg;
    Rng rng(2);
    const int n = 10000;
    std::vector<int> hits(11, 0);
    Vec3 sum;
    double max_abs = 0.0;
    for (int i = 0; i < n; ++i) {
        const RsisStart s = rsis_init(clip, rng, cfg, 2);
        REQUIRE(s.offset >= 5);
        REQUIRE(s.offset <= 10);
        ++hits[static_cast<std::size_t>(s.offset)];
        CHECK(s.first_target == s.frame + static_cast<std::size_t>(s.offset));
        CHECK(s.first_target + 1 < clip.size());
        for (int k = 0; k < 3; ++k) max_abs = std::max(max_abs, std::abs(s.translation[k]));
        sum += s.translation;
        const Vec3 shift = s.state.joint_positions[1] - clip.frames[s.frame].joint_positions[1];
        CHECK((shift - s.translation).norm() < 1e-12);
    }
    for (int k = 5; k <= 10; ++k) CHECK(hits[static_cast<std::size_t>(k)] > n / 12);
    CHECK(max_abs <= cfg.translation_noise);
    // uniform(-s, s) has sd s / sqrt(3)
    const double bound = 3.0 * cfg.translation_noise / std::sqrt(3.0) / std::sqrt(static_cast<double>(n));
    for (int k = 0; k < 3; ++k) CHECK(std::abs(sum[k] / n) < bound);

    MotionClip tiny = clip;
    tiny.frames.resize(12);
    CHECK_THROWS_AS(rsis_init(tiny, rng, cfg, 2), InvalidArgument);
    CHECK_NOTHROW(rsis_init(tiny, rng, cfg, 1));
}

TEST_CASE("advantages") {
    SUBCASE("single step") {
        const auto r = compute_gae(Eigen::VectorXd::Constant(1, 0.7), Eigen::VectorXd::Constant(1, 0.2),
                                   Eigen::VectorXd::Constant(1, 0.5), {1}, 0.9, 0.95);
        CHECK(r.advantages[0] == Approx(0.7 + 0.9 * 0.5 - 0.2).epsilon(1e-15));
        CHECK(r.returns[0] == Approx(0.7 + 0.9 * 0.5).epsilon(1e-15));
    }
    SUBCASE("telescoping suffix sums") {
        const Eigen::VectorXd rew = Eigen::Vector4d(1.0, 2.0, 3.0, 4.0);
        const auto r = compute_gae(rew, Eigen::VectorXd::Zero(4), Eigen::VectorXd::Zero(4), {0, 0, 0, 1}, 1.0, 1.0);
        CHECK(r.advantages[0] == 10.0);
        CHECK(r.advantages[1] == 9.0);
        CHECK(r.advantages[2] == 7.0);
        CHECK(r.advantages[3] == 4.0);
    }
    SUBCASE("random episodes match the direct sum") {
        Rng rng(3);
        const int n = 60;
        Eigen::VectorXd rew(n), val(n), next(n);
        std::vector<std::uint8_t> bound(n, 0);
        for (int i = 0; i < n; ++i) {
            rew[i] = uniform(rng, -1, 1);
            val[i] = uniform(rng, -1, 1);
            bound[static_cast<std::size_t>(i)] = uniform01(rng) < 0.1 || i == n - 1;
        }
        for (int i = 0; i < n; ++i) next[i] = bound[static_cast<std::size_t>(i)] ? uniform(rng, -1, 1) : val[i + 1];
        const double g = 0.95, l = 0.9;
        const auto r = compute_gae(rew, val, next, bound, g, l);
        for (int t = 0; t < n; ++t) {
            double a = 0.0, w = 1.0;
            for (int k = t; k < n; ++k) {
                a += w * (rew[k] + g * next[k] - val[k]);
                if (bound[static_cast<std::size_t>(k)]) break;
                w *= g * l;
            }
            CHECK(std::abs(r.advantages[t] - a) < 1e-10);
        }
    }
    CHECK_THROWS_AS(compute_gae(Eigen::VectorXd::Zero(2), Eigen::VectorXd::Zero(1), Eigen::VectorXd::Zero(2), {0, 1},
                                0.9, 0.9),
                    InvalidArgument);
}

TEST_CASE("gaussian KL") {
    const Eigen::VectorXd z = Eigen::VectorXd::Zero(1);
    const Eigen::VectorXd one = Eigen::VectorXd::Ones(1);
    CHECK(gaussian_kl(z, z, one, z, KlDirection::new_old) == Approx(0.5).epsilon(1e-15));
    // KL(N(0, e^2) || N(0, 1)) = (e^2 - 1) / 2 - 1
    const double e2 = std::exp(2.0);
    CHECK(gaussian_kl(z, one, z, z, KlDirection::new_old) == Approx((e2 - 1.0) / 2.0 - 1.0).epsilon(1e-14));
    CHECK(gaussian_kl(z, one, z, z, KlDirection::old_new) == Approx((1.0 / e2 - 1.0) / 2.0 + 1.0).epsilon(1e-14));
    CHECK(gaussian_kl(one, one, one, one, KlDirection::old_new) == 0.0);
}

TEST_CASE("objective at the collecting policy") {
    const GaussianPolicy p = toy_policy(3, 2, 4);
    RolloutBatch b = toy_batch(6, 3, 2, 5);
    b.old_means = p.mean_net.forward(b.observations, nullptr);
    b.old_logstd = p.logstd;
    for (int i = 0; i < 6; ++i) b.logprobs[i] = gaussian_logprob(b.old_means.col(i), p.logstd, b.actions.col(i));
    std::vector<Eigen::Index> idx(6);
    std::iota(idx.begin(), idx.end(), 0);
    for (auto dir : {KlDirection::new_old, KlDirection::old_new}) {
        const Objective o = ppo_objective(p, b, idx, 0.5, dir);
        CHECK(o.kl == Approx(0.0).epsilon(1e-15));
        CHECK(o.value == Approx(b.advantages.mean()).epsilon(1e-12));
        CHECK(o.surrogate == Approx(b.advantages.mean()).epsilon(1e-12));
    }
}

TEST_CASE("objective gradient matches central differences") {
    for (auto dir : {KlDirection::new_old, KlDirection::old_new}) {
        GaussianPolicy p = toy_policy(3, 2, 8);
        const RolloutBatch b = toy_batch(4, 3, 2, 9);
        const std::vector<Eigen::Index> idx{0, 1, 2, 3};
        const Objective o = ppo_objective(p, b, idx, 0.7, dir);
        const Eigen::Index np = p.mean_net.num_params();
        REQUIRE(o.grad.size() == np + 2);
        const double h = 1e-6;
        double worst = 0.0;
        auto eval = [&] { return ppo_objective(p, b, idx, 0.7, dir, false).value; };
        for (Eigen::Index i = 0; i < o.grad.size(); ++i) {
            double& x = i < np ? p.mean_net.params()[i] : p.logstd[i - np];
            const double keep = x;
            x = keep + h;
            const double up = eval();
            x = keep - h;
            const double down = eval();
            x = keep;
            const double fd = (up - down) / (2 * h);
            worst = std::max(worst, std::abs(fd - o.grad[i]) / std::max(1e-8, std::abs(fd) + std::abs(o.grad[i])));
        }
        CHECK(worst < 1e-4);
    }
}

TEST_CASE("rollout batch shape, determinism and snapshot consistency") {
    const auto m = toy_model();
    TrainConfig c = toy_config();
    c.ppo.workers = 2;
    c.ppo.samples_per_worker = 64;
    Trainer a(m, toy_clips(m), c);
    Trainer b(m, toy_clips(m), c);
    IterationMetrics ma;
    const RolloutBatch x = a.collect(0, &ma);
    const RolloutBatch y = b.collect(0);
    CHECK(x.size() == 128);
    CHECK(x.observations.cols() == 128);
    CHECK((x.actions.array() == y.actions.array()).all());
    CHECK((x.rewards.array() == y.rewards.array()).all());
    for (Eigen::Index i = 0; i < x.size(); ++i)
        CHECK(x.logprobs[i] == Approx(gaussian_logprob(x.old_means.col(i), x.old_logstd, x.actions.col(i))).epsilon(1e-12));
    // every worker segment closes at its last step
    CHECK(x.boundaries[63] == 1);
    CHECK(x.boundaries[127] == 1);
    std::size_t ends = 0;
    for (const auto& [k, v] : ma.causes) {
        CHECK((k == "clip_end" || k == "horizon" || k == "divergence" || k.rfind("term_violation:", 0) == 0));
        ends += v;
    }
    CHECK(ends == ma.episodes);
    const auto started = std::accumulate(ma.clip_counts.begin(), ma.clip_counts.end(), std::size_t{0});
    CHECK(started == ma.episodes + 2);
}

TEST_CASE("forced violation ends every episode at its first step") {
    const auto m = toy_model();
    TrainConfig c = toy_config();
    c.task.tolerance.alpha = {0.999999, 0.0, 0.0, 0.0, 0.0};
    c.rsis.translation_noise = 0.05;
    Trainer t(m, toy_clips(m), c);
    IterationMetrics mt;
    const RolloutBatch b = t.collect(0, &mt);
    CHECK(mt.episodes == static_cast<std::size_t>(b.size()));
    CHECK(mt.causes["term_violation:pr"] == mt.episodes);
    CHECK(mt.episode_length_mean == 1.0);
    for (auto v : b.boundaries) CHECK(v == 1);
    CHECK(b.next_values.isZero(0.0));
}

TEST_CASE("larger KL weight keeps the update closer") {
    const auto m = toy_model();
    double last = std::numeric_limits<double>::infinity();
    for (double beta : {0.1, 3.0, 100.0}) {
        TrainConfig c = toy_config();
        c.ppo.beta = beta;
        c.ppo.policy_optimizer.lr = 3e-3;
        c.ppo.epochs = 4;
        Trainer t(m, toy_clips(m), c);
        RolloutBatch b = t.collect(0);
        const UpdateMetrics u = t.update(b, 0);
        CHECK(u.kl <= last);
        last = u.kl;
    }
}

TEST_CASE("variance controller runs once per update") {
    const auto m = toy_model(2);
    TrainConfig c = toy_config();
    c.variance.iterations = 10;
    Trainer t(m, toy_clips(m), c);
    for (int i = 0; i < 4; ++i) {
        const Eigen::VectorXd before = t.policy().logstd;
        t.run_iteration();
        const Eigen::VectorXd& ls = t.policy().logstd;
        CHECK(std::abs(ls.mean() - c.variance.target(i + 1)) < 1e-12);
        CHECK(ls.size() == before.size());
    }
    c.ablation.variance_control = false;
    Trainer off(m, toy_clips(m), c);
    off.run_iteration();
    CHECK(std::abs(off.policy().logstd.mean() - c.variance.target(1)) > 1e-9);
}

TEST_CASE("metrics logs are reproducible, resumable and thread independent") {
    const auto m = toy_model();
    const TrainConfig c = toy_config();
    auto run = [&](TrainConfig cfg) {
        Trainer t(m, toy_clips(m), cfg);
        std::ostringstream log;
        t.train(&log);
        return log.str();
    };
    const std::string full = run(c);
    CHECK(full == run(c));
    TrainConfig threaded = c;
    threaded.ppo.threads = 3;
    CHECK(full == run(threaded));

    const auto dir = std::filesystem::temp_directory_path() / "unicon_resume_test";
    std::filesystem::remove_all(dir);
    TrainConfig half = c;
    half.iterations = 2;
    std::ostringstream log;
    {
        Trainer t(m, toy_clips(m), half);
        t.train(&log, dir);
    }
    CHECK(std::filesystem::exists(dir / "checkpoint.bin"));
    Trainer resumed(m, toy_clips(m), c);
    resumed.load_checkpoint(TensorArchive::load(dir / "checkpoint.bin"));
    CHECK(resumed.iteration() == 2);
    resumed.train(&log);
    CHECK(log.str() == full);
    std::filesystem::remove_all(dir);

    TrainConfig other = c;
    other.seed = 8;
    CHECK(full != run(other));
}

TEST_CASE("balancer changes clip frequencies as the tables predict") {
    const auto m = toy_model();
    std::vector<MotionClip> clips;
    for (int i = 0; i < 3; ++i) {
        clips.push_back(sinusoid_clip(m, "walk" + std::to_string(i), 0.1 + 0.05 * i, 0.5, 0.0, 1.0));
        clips.back().label_path = {"root", "walk"};
    }
    clips.push_back(sinusoid_clip(m, "jump", 0.2, 0.7, 0.0, 1.0));
    clips.back().label_path = {"root", "jump"};
    for (bool balancer : {true, false}) {
        TrainConfig c = toy_config();
        c.ablation.balancer = balancer;
        c.ppo.workers = 64;
        c.ppo.samples_per_worker = 1;
        c.ppo.minibatches = 1;
        Trainer t(m, clips, c);
        std::size_t jump = 0, total = 0;
        for (int i = 0; i < 40; ++i) {
            IterationMetrics mt;
            t.collect(i, &mt);
            jump += mt.clip_counts[3];
            total += std::accumulate(mt.clip_counts.begin(), mt.clip_counts.end(), std::size_t{0});
        }
        const double expected = t.table().probability("jump");
        CHECK(expected == (balancer ? 0.5 : 0.25));
        const double freq = static_cast<double>(jump) / static_cast<double>(total);
        CHECK(std::abs(freq - expected) < 4.0 * std::sqrt(expected * (1 - expected) / static_cast<double>(total)));
    }
}

TEST_CASE("ablation observations") {
    const auto m = toy_model(2);
    const auto clips = toy_clips(m);
    const std::size_t base = observation_size(2, 1);
    auto size_for = [&](AblationConfig a) { return TrackingEnv(m, TaskConfig{}, a, clips.size()).observation_size(); };
    CHECK(size_for({}) == base);
    CHECK(size_for({ObservationMode::onehot}) == base + 2);
    CHECK(size_for({ObservationMode::variable}) == base + 1);
    CHECK(size_for({ObservationMode::kinematic_state}) == base - state_encoding_size(2));
    CHECK(size_for({ObservationMode::full, TargetMode::lookahead, 5}) == base);
    CHECK(size_for({ObservationMode::full, TargetMode::stack, 3}) == observation_size(2, 3));

    TrackingEnv env(m, TaskConfig{}, {ObservationMode::onehot}, clips.size());
    env.reset_at(clips[1], 1, 0);
    const Eigen::VectorXd o = env.observation();
    CHECK(o[static_cast<Eigen::Index>(base)] == 0.0);
    CHECK(o[static_cast<Eigen::Index>(base + 1)] == 1.0);

    TrackingEnv look(m, TaskConfig{}, {ObservationMode::full, TargetMode::lookahead, 4}, clips.size());
    look.reset_at(clips[0], 0, 3);
    REQUIRE(look.targets().size() == 1);
    CHECK(look.targets()[0] == clips[0].frames[7]);
    TrackingEnv kin(m, TaskConfig{}, {ObservationMode::kinematic_state}, clips.size());
    kin.reset_at(clips[0], 0, 0);
    TrackingEnv full(m, TaskConfig{}, {}, clips.size());
    full.reset_at(clips[0], 0, 0);
    CHECK(kin.observation() == full.observation().tail(static_cast<Eigen::Index>(kin.observation_size())));
}

TEST_CASE("episodes end at the clip end") {
    const auto m = toy_model();
    const auto clip = sinusoid_clip(m, "s", 0.0, 0.5, 0.0, 0.5);
    TaskConfig task;
    task.tolerance.alpha = {0.0, 0.0, 0.0, 0.0, 0.0};
    TrackingEnv env(m, task);
    env.reset_at(clip, 0, 0);
    CHECK(env.available_steps() == clip.size() - 1);
    StepResult r;
    int steps = 0;
    while (r.end == EndCause::none) {
        r = env.step(Eigen::VectorXd::Zero(1));
        ++steps;
    }
    CHECK(r.end == EndCause::clip_end);
    CHECK(steps == static_cast<int>(clip.size()) - 1);
    CHECK(env.cursor() == clip.size() - 1);
    task.horizon = 5;
    TrackingEnv capped(m, task);
    capped.reset_at(clip, 0, 0);
    for (int i = 0; i < 4; ++i) CHECK(capped.step(Eigen::VectorXd::Zero(1)).end == EndCause::none);
    CHECK(capped.step(Eigen::VectorXd::Zero(1)).end == EndCause::horizon);
    CHECK_THROWS_AS(env.step(Eigen::VectorXd::Zero(2)), InvalidArgument);
}

TEST_CASE("evaluation protocols") {
    const auto m = toy_model();
    TrainConfig c = toy_config();
    Trainer t(m, toy_clips(m), c);
    const EvalOptions opt{2, 3};
    const auto clean = evaluate_relative(t.policy(), nullptr, m, t.clips(), c.task, c.ablation, {}, opt);
    CHECK(clean.relative == 1.0);
    EvalProtocol same;
    same.speed_ratio = 1.0;
    CHECK(evaluate(t.policy(), nullptr, m, t.clips(), c.task, c.ablation, same, opt).mean_score ==
          clean.clean.mean_score);
    EvalProtocol slow;
    slow.speed_ratio = 0.5;
    slow.impulse_period = 10;
    slow.impulse_magnitude = 1.0;
    slow.mass_scale = 1.2;
    const auto r = evaluate_relative(t.policy(), nullptr, m, t.clips(), c.task, c.ablation, slow, opt);
    CHECK(r.perturbed.episodes == 4);
    CHECK(std::isfinite(r.relative));
    CHECK(r.protocol.label() == "speed-0.5 impulse-10x1 mass-1.2");
    CHECK(standard_sweep(2.0).size() == 10);
    slow.mass_scale = 3.0;
    CHECK_THROWS_AS(evaluate(t.policy(), nullptr, m, t.clips(), c.task, c.ablation, slow, opt), InvalidArgument);
}

TEST_CASE("warm start") {
    const auto m = toy_model();
    TrainConfig c = toy_config();
    c.iterations = 40;
    Trainer pre(m, toy_clips(m), c);
    pre.train(nullptr);
    const FinetuneReport r = finetune(pre.checkpoint(), m, toy_clips(m), c, 2);
    REQUIRE(r.scratch.size() == 2);
    REQUIRE(r.warm.size() == 2);
    CHECK(r.warm[0] >= r.scratch[0]);

    TrainConfig wide = c;
    wide.ppo.hidden = {8};
    Trainer other(m, toy_clips(m), wide);
    CHECK_THROWS_AS(other.warm_start(pre.checkpoint()), InvalidArgument);
}

TEST_CASE("one-link tracking toy improves") {
    const auto m = toy_model();
    TrainConfig c = toy_config();
    c.ppo.workers = 8;
    c.ppo.samples_per_worker = 64;
    c.ppo.epochs = 5;
    c.ppo.minibatches = 4;
    c.iterations = 200;
    c.variance.iterations = 200;
    c.variance.logstd_final = -2.0;
    const std::vector<MotionClip> clips{sinusoid_clip(m, "a", 0.6, 0.5, 0.0, 4.0)};
    Trainer t(m, clips, c);
    const double initial = score(t);
    t.train(nullptr);
    const double final_score = score(t);
    MESSAGE("initial " << initial << " final " << final_score);
    CHECK(final_score >= 1.5 * initial);
}
