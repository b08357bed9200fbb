#include "unicon/selftest.hpp"

#include <cmath>
#include <numbers>
#include <sstream>

#include "unicon/synth.hpp"
#include "unicon/trainer.hpp"

namespace unicon {

namespace {

double rel_err(double a, double b) { return std::abs(a - b) / std::max(1e-8, std::abs(a) + std::abs(b)); }

}  // namespace

SelfTestReport energy_check(double seconds) {
    ChainOptions opt;
    opt.free_root = false;
    const CharacterModel model = build_chain(2, true, opt);
    SimConfig cfg;
    cfg.contacts = false;
    SimState s = zero_state(model);
    s.q[0] = std::numbers::pi / 2;
    s.q[1] = 0.3;
    const Eigen::VectorXd zero = Eigen::VectorXd::Zero(model.num_actuated());
    // energy measured from the hanging rest pose
    SimState rest = zero_state(model);
    rest.q[0] = std::numbers::pi;
    const double floor = potential_energy(model, rest, cfg.gravity);
    auto energy = [&](const SimState& x) {
        return kinetic_energy(model, x) + potential_energy(model, x, cfg.gravity) - floor;
    };
    const double e0 = energy(s);
    const int steps = static_cast<int>(std::lround(seconds / cfg.dt));
    double worst = 0.0;
    for (int i = 0; i < steps; ++i) {
        s = step(model, s, zero, cfg);
        worst = std::max(worst, std::abs(energy(s) - e0) / e0);
    }
    std::ostringstream d;
    d << steps << " steps at dt " << cfg.dt << " with " << cfg.substeps << " substeps";
    return {"energy", worst, 0.02, d.str()};
}

SelfTestReport gradient_check(std::uint64_t seed) {
    Rng rng(seed);
    const double h = 1e-6;
    double worst = 0.0;

    Mlp net({4, 6, 6, 3}, Activation::tanh);
    for (auto& v : net.params()) v = uniform(rng, -0.7, 0.7);
    Eigen::MatrixXd x(4, 5), c(3, 5);
    for (auto& v : x.reshaped()) v = uniform(rng, -1.0, 1.0);
    for (auto& v : c.reshaped()) v = uniform(rng, -1.0, 1.0);
    auto loss = [&] { return net.forward(x, nullptr).cwiseProduct(c).sum(); };
    MlpCache cache;
    net.forward(x, &cache);
    Eigen::VectorXd grad;
    net.backward(cache, c, grad);
    for (Eigen::Index i = 0; i < net.num_params(); ++i) {
        const double keep = net.params()[i];
        net.params()[i] = keep + h;
        const double up = loss();
        net.params()[i] = keep - h;
        const double down = loss();
        net.params()[i] = keep;
        worst = std::max(worst, rel_err(grad[i], (up - down) / (2 * h)));
    }
    const double mlp_worst = worst;

    GaussianPolicy p;
    p.mean_net = Mlp({3, 5, 2}, Activation::tanh);
    for (auto& v : p.mean_net.params()) v = uniform(rng, -0.6, 0.6);
    p.logstd = Eigen::Vector2d(-0.6, -0.4);
    RolloutBatch b;
    const int n = 6;
    b.workers = 1;
    b.steps = n;
    b.observations.resize(3, n);
    b.actions.resize(2, n);
    b.old_means.resize(2, n);
    for (auto& v : b.observations.reshaped()) v = uniform(rng, -1.0, 1.0);
    for (auto& v : b.actions.reshaped()) v = uniform(rng, -1.0, 1.0);
    for (auto& v : b.old_means.reshaped()) v = uniform(rng, -0.3, 0.3);
    b.old_logstd = Eigen::Vector2d(-0.75, -0.5);
    b.logprobs.resize(n);
    b.advantages.resize(n);
    for (int i = 0; i < n; ++i) {
        b.logprobs[i] = gaussian_logprob(b.old_means.col(i), b.old_logstd, b.actions.col(i));
        b.advantages[i] = uniform(rng, -1.0, 1.0);
    }
    b.rewards = b.values = b.next_values = b.returns = Eigen::VectorXd::Zero(n);
    b.boundaries.assign(n, 0);
    std::vector<Eigen::Index> idx(n);
    for (int i = 0; i < n; ++i) idx[static_cast<std::size_t>(i)] = i;
    for (auto dir : {KlDirection::new_old, KlDirection::old_new}) {
        const Objective o = ppo_objective(p, b, idx, 0.7, dir);
        const Eigen::Index np = p.mean_net.num_params();
        for (Eigen::Index i = 0; i < o.grad.size(); ++i) {
            double& v = i < np ? p.mean_net.params()[i] : p.logstd[i - np];
            const double keep = v;
            v = keep + h;
            const double up = ppo_objective(p, b, idx, 0.7, dir, false).value;
            v = keep - h;
            const double down = ppo_objective(p, b, idx, 0.7, dir, false).value;
            v = keep;
            worst = std::max(worst, rel_err(o.grad[i], (up - down) / (2 * h)));
        }
    }
    std::ostringstream d;
    d << "mlp " << mlp_worst << ", objective " << worst;
    return {"gradcheck", worst, 1e-4, d.str()};
}

SelfTestReport determinism_check(std::uint64_t seed) {
    const CharacterModel human = build_humanoid();
    auto sim_run = [&] {
        Rng rng(seed);
        SimState s = zero_state(human);
        s.q[2] = 1.2;
        const SimConfig cfg;
        Eigen::VectorXd tau(human.num_actuated());
        for (int i = 0; i < 60; ++i) {
            for (auto& t : tau) t = uniform(rng, -20.0, 20.0);
            s = step(human, s, tau, cfg);
        }
        return s;
    };
    int differing = sim_run() == sim_run() ? 0 : 1;

    ChainOptions o;
    o.armature = 0.1;
    const CharacterModel chain = build_chain(2, true, o);
    TrainConfig c;
    c.ppo.workers = 4;
    c.ppo.samples_per_worker = 32;
    c.ppo.hidden = {16, 16};
    c.ppo.epochs = 2;
    c.ppo.minibatches = 2;
    c.task.action_scale = 0.25;
    c.iterations = 2;
    c.seed = seed;
    auto train_run = [&] {
        Trainer t(chain, {sway_clip(chain, 2.0), squat_clip(chain, 2.0)}, c);
        std::ostringstream log;
        t.train(&log);
        return std::pair(log.str(), t.policy().mean_net.params());
    };
    const auto a = train_run(), b = train_run();
    if (a.first != b.first || a.second != b.second) ++differing;
    return {"determinism", static_cast<double>(differing), 0.5, "humanoid 60 steps, 2 training iterations"};
}

}  // namespace unicon
