#include "unicon/config.hpp"

#include <algorithm>
#include <cctype>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <numbers>
#include <set>
#include <sstream>

#include "json.hpp"
#include "unicon/error.hpp"

extern char** environ;

namespace unicon {

using nlohmann::json;

void ServerConfig::validate() const {
    if (port < 0 || port > 65535) throw InvalidArgument("port must be in [0, 65535]");
    if (udp_port < -1 || udp_port > 65535) throw InvalidArgument("udp port must be in [-1, 65535]");
    if (!(tick_rate > 0.0 && tick_rate <= 10000.0)) throw InvalidArgument("tick rate must be in (0, 10000] Hz");
    if (inbound_capacity == 0) throw InvalidArgument("inbound capacity must be positive");
    if (send_queue == 0) throw InvalidArgument("send queue depth must be positive");
}

void ModelSpec::validate() const {
    if (kind == "chain") {
        if (links < 1) throw InvalidArgument("a chain needs at least one link");
        if (!(chain.link_length > 0.0 && chain.link_mass > 0.0 && chain.link_radius > 0.0 && chain.base_mass > 0.0))
            throw InvalidArgument("chain sizes and masses must be positive");
        if (!(chain.effort_limit > 0.0) || !(chain.armature >= 0.0))
            throw InvalidArgument("effort limit must be positive and armature non-negative");
    } else if (kind == "file") {
        if (path.empty()) throw InvalidArgument("model kind 'file' needs a path");
    } else if (kind != "humanoid") {
        throw InvalidArgument("model kind must be chain, humanoid or file");
    }
}

void RunConfig::validate() const {
    model.validate();
    train.validate();
    serve.server.validate();
    session().validate();
}

SessionConfig RunConfig::session() const {
    SessionConfig s;
    s.task = train.task;
    s.ablation = train.ablation;
    s.transition_frames = schedulers.transition_frames;
    s.command.turn_rate = schedulers.turn_rate_deg * std::numbers::pi / 180.0;
    s.command.max_speed = schedulers.max_speed;
    s.stream_smoothing = schedulers.stream_smoothing;
    s.pose_capacity = schedulers.pose_capacity;
    s.perturbation = serve.perturbation;
    s.max_impulse = serve.max_impulse;
    return s;
}

namespace {

/// Walks a config tree once to write it, or to read it while rejecting unknown keys.
class Binder {
public:
    /// Writer.
    Binder() : json_(json::object()), reading_(false) {}
    /// Reader over `j`.
    Binder(const json& j, std::string path) : json_(j), reading_(true), path_(std::move(path)) {
        if (!json_.is_object()) fail("", "must be an object");
    }

    const json& result() const { return json_; }

    void section(const char* key, const std::function<void(Binder&)>& body) {
        if (!reading_) {
            Binder inner;
            body(inner);
            json_[key] = inner.json_;
            return;
        }
        if (!take(key)) return;
        Binder inner(json_[key], join(key));
        body(inner);
        inner.finish();
    }

    template <class T>
    void field(const char* key, T& value) {
        if (!reading_) {
            json_[key] = value;
            return;
        }
        if (!take(key)) return;
        const json& v = json_[key];
        if constexpr (std::is_same_v<T, bool>) {
            if (!v.is_boolean()) fail(key, "must be true or false");
            value = v.get<bool>();
        } else if constexpr (std::is_same_v<T, std::string>) {
            if (!v.is_string()) fail(key, "must be a string");
            value = v.get<std::string>();
        } else if constexpr (std::is_floating_point_v<T>) {
            if (!v.is_number()) fail(key, "must be a number");
            value = v.get<T>();
        } else if constexpr (std::is_unsigned_v<T>) {
            if (!v.is_number_unsigned()) fail(key, "must be a non-negative integer");
            value = v.get<T>();
        } else if constexpr (std::is_integral_v<T>) {
            if (!v.is_number_integer()) fail(key, "must be an integer");
            const auto n = v.get<std::int64_t>();
            if (n < std::numeric_limits<T>::min() || n > std::numeric_limits<T>::max()) fail(key, "is out of range");
            value = static_cast<T>(n);
        } else {
            if (!v.is_array()) fail(key, "must be a list");
            try {
                value = v.get<T>();
            } catch (const json::exception&) {
                fail(key, "has entries of the wrong type");
            }
        }
    }

    /// Enum stored as its name.
    template <class E>
    void named(const char* key, E& value, std::string_view (*name)(E), E (*from)(std::string_view)) {
        std::string s(name(value));
        field(key, s);
        if (!reading_) return;
        try {
            value = from(s);
        } catch (const InvalidArgument& e) {
            fail(key, e.what());
        }
    }

    void vec3(const char* key, Vec3& v) {
        std::vector<double> xs{v.x, v.y, v.z};
        field(key, xs);
        if (!reading_) return;
        if (xs.size() != 3) fail(key, "must hold three numbers");
        v = {xs[0], xs[1], xs[2]};
    }

    void finish() const {
        for (const auto& [k, v] : json_.items())
            if (!seen_.count(k)) throw ParseError("unknown config key '" + join(k.c_str()) + "'");
    }

private:
    bool take(const char* key) {
        seen_.insert(key);
        return json_.contains(key);
    }

    std::string join(const char* key) const { return path_.empty() ? key : path_ + "." + key; }

    [[noreturn]] void fail(const char* key, const std::string& what) const {
        const std::string where = *key ? join(key) : (path_.empty() ? "config" : path_);
        throw ParseError("config key '" + where + "' " + what);
    }

    json json_;
    bool reading_;
    std::string path_;
    std::set<std::string> seen_;
};

std::string_view integrator_name(Integrator i) { return i == Integrator::rk4 ? "rk4" : "semi_implicit_euler"; }

Integrator integrator_from(std::string_view name) {
    if (name == "rk4") return Integrator::rk4;
    if (name == "semi_implicit_euler") return Integrator::semi_implicit_euler;
    throw InvalidArgument("unknown integrator '" + std::string(name) + "'");
}

void bind(Binder& b, AdamConfig& a) {
    b.field("lr", a.lr);
    b.field("beta1", a.beta1);
    b.field("beta2", a.beta2);
    b.field("epsilon", a.epsilon);
    b.field("max_grad_norm", a.max_grad_norm);
}

void bind(Binder& b, RunConfig& c) {
    TrainConfig& t = c.train;
    b.field("seed", t.seed);
    b.field("iterations", t.iterations);
    b.field("checkpoint_every", t.checkpoint_every);
    b.section("model", [&](Binder& m) {
        m.field("kind", c.model.kind);
        m.field("links", c.model.links);
        m.field("planar", c.model.planar);
        m.field("path", c.model.path);
        m.field("link_length", c.model.chain.link_length);
        m.field("link_mass", c.model.chain.link_mass);
        m.field("link_radius", c.model.chain.link_radius);
        m.field("base_mass", c.model.chain.base_mass);
        m.vec3("base_half_extents", c.model.chain.base_half_extents);
        m.field("effort_limit", c.model.chain.effort_limit);
        m.field("armature", c.model.chain.armature);
        m.field("free_root", c.model.chain.free_root);
    });
    b.section("ppo", [&](Binder& p) {
        PpoConfig& o = t.ppo;
        p.field("workers", o.workers);
        p.field("samples_per_worker", o.samples_per_worker);
        p.field("beta", o.beta);
        p.named("kl_direction", o.kl_direction, kl_direction_name, kl_direction_from);
        p.field("adaptive_kl", o.adaptive_kl);
        p.field("kl_target", o.kl_target);
        p.field("epochs", o.epochs);
        p.field("minibatches", o.minibatches);
        p.field("gamma", o.gamma);
        p.field("lambda", o.lambda);
        p.field("normalize_advantages", o.normalize_advantages);
        p.field("normalize_observations", o.normalize_observations);
        p.section("policy_optimizer", [&](Binder& a) { bind(a, o.policy_optimizer); });
        p.section("value_optimizer", [&](Binder& a) { bind(a, o.value_optimizer); });
        p.field("hidden", o.hidden);
        p.named("activation", o.activation, activation_name, activation_from);
        p.field("threads", o.threads);
    });
    b.section("rsis", [&](Binder& r) {
        r.field("k_min", t.rsis.k_min);
        r.field("k_max", t.rsis.k_max);
        r.field("translation_noise", t.rsis.translation_noise);
        r.field("velocity_noise", t.rsis.velocity_noise);
        r.field("enabled", t.rsis.enabled);
    });
    b.section("variance", [&](Binder& v) {
        v.field("logstd_0", t.variance.logstd_0);
        v.field("logstd_final", t.variance.logstd_final);
        v.field("iterations", t.variance.iterations);
        v.field("enabled", t.variance.enabled);
    });
    b.section("task", [&](Binder& k) {
        TaskConfig& task = t.task;
        k.section("encoder", [&](Binder& e) {
            e.field("tau", task.encoder.tau);
            e.field("heading_frame", task.encoder.heading_frame);
            e.field("targets_in_current_frame", task.encoder.targets_in_current_frame);
        });
        k.section("weights", [&](Binder& w) {
            w.field("pr", task.weights.pr);
            w.field("qr", task.weights.qr);
            w.field("pj", task.weights.pj);
            w.field("qj", task.weights.qj);
            w.field("qdj", task.weights.qdj);
        });
        k.section("coefficients", [&](Binder& w) {
            w.field("k_pr", task.coeffs.k_pr);
            w.field("k_qr", task.coeffs.k_qr);
            w.field("k_pj", task.coeffs.k_pj);
            w.field("k_qj", task.coeffs.k_qj);
            w.field("k_qdj", task.coeffs.k_qdj);
        });
        k.section("tolerance", [&](Binder& w) {
            for (std::size_t i = 0; i < kNumRewardTerms; ++i)
                w.field(std::string(kRewardTermNames[i]).c_str(), task.tolerance.alpha[i]);
        });
        k.section("sim", [&](Binder& s) {
            SimConfig& sim = task.sim;
            s.field("dt", sim.dt);
            s.field("substeps", sim.substeps);
            s.field("gravity", sim.gravity);
            s.field("friction", sim.friction);
            s.field("contact_stiffness", sim.contact_stiffness);
            s.field("contact_damping_ratio", sim.contact_damping_ratio);
            s.field("tangential_damping", sim.tangential_damping);
            s.field("joint_damping", sim.joint_damping);
            s.field("contacts", sim.contacts);
            s.field("solver_iterations", sim.solver_iterations);
            s.named("integrator", sim.integrator, integrator_name, integrator_from);
        });
        k.field("action_scale", task.action_scale);
        k.field("horizon", task.horizon);
    });
    b.section("ablation", [&](Binder& a) {
        a.named("observation", t.ablation.observation, observation_mode_name, observation_mode_from);
        a.named("targets", t.ablation.targets, target_mode_name, target_mode_from);
        a.field("k", t.ablation.k);
        a.field("balancer", t.ablation.balancer);
        a.field("variance_control", t.ablation.variance_control);
    });
    b.section("schedulers", [&](Binder& s) {
        s.field("transition_frames", c.schedulers.transition_frames);
        s.field("turn_rate_deg", c.schedulers.turn_rate_deg);
        s.field("max_speed", c.schedulers.max_speed);
        s.field("stream_smoothing", c.schedulers.stream_smoothing);
        s.field("pose_capacity", c.schedulers.pose_capacity);
    });
    b.section("serve", [&](Binder& s) {
        ServerConfig& sv = c.serve.server;
        s.field("address", sv.address);
        s.field("port", sv.port);
        s.field("udp_port", sv.udp_port);
        s.field("tick_rate", sv.tick_rate);
        s.field("inbound_capacity", sv.inbound_capacity);
        s.field("send_queue", sv.send_queue);
        s.field("max_impulse", c.serve.max_impulse);
        s.section("perturbation", [&](Binder& p) {
            p.field("period", c.serve.perturbation.period);
            p.field("magnitude", c.serve.perturbation.magnitude);
            p.field("body", c.serve.perturbation.body);
            p.field("seed", c.serve.perturbation.seed);
        });
    });
}

/// UNICON_PPO__WORKERS=8 sets ppo.workers; values are JSON when they parse, strings otherwise.
void apply_overrides(json& doc, const std::map<std::string, std::string>& overrides) {
    for (const auto& [name, raw] : overrides) {
        if (name.rfind(kEnvPrefix, 0) != 0) continue;
        std::string rest = name.substr(kEnvPrefix.size());
        std::transform(rest.begin(), rest.end(), rest.begin(), [](unsigned char ch) { return std::tolower(ch); });
        std::vector<std::string> path;
        for (std::size_t at = 0;;) {
            const auto sep = rest.find("__", at);
            path.push_back(rest.substr(at, sep == std::string::npos ? std::string::npos : sep - at));
            if (sep == std::string::npos) break;
            at = sep + 2;
        }
        if (std::any_of(path.begin(), path.end(), [](const std::string& p) { return p.empty(); }))
            throw ParseError("malformed override variable " + name);
        json* node = &doc;
        for (std::size_t i = 0; i + 1 < path.size(); ++i) {
            json& next = (*node)[path[i]];
            if (next.is_null()) next = json::object();
            if (!next.is_object()) throw ParseError("override " + name + " descends into a value");
            node = &next;
        }
        json value = json::parse(raw, nullptr, false);
        if (value.is_discarded()) value = raw;
        (*node)[path.back()] = std::move(value);
    }
}

}  // namespace

std::string config_to_json(const RunConfig& config) {
    Binder b;
    RunConfig copy = config;
    bind(b, copy);
    return b.result().dump(2);
}

RunConfig config_from_json(std::string_view text, const std::map<std::string, std::string>& overrides) {
    json doc = json::object();
    if (!std::all_of(text.begin(), text.end(), [](unsigned char ch) { return std::isspace(ch); })) {
        try {
            doc = json::parse(text);
        } catch (const json::parse_error& e) {
            throw ParseError(std::string("config is not valid JSON: ") + e.what());
        }
    }
    apply_overrides(doc, overrides);
    RunConfig config;
    Binder b(doc, "");
    bind(b, config);
    b.finish();
    try {
        config.validate();
    } catch (const InvalidArgument& e) {
        throw ParseError(std::string("invalid config: ") + e.what());
    }
    return config;
}

std::map<std::string, std::string> environment_overrides() {
    std::map<std::string, std::string> out;
    for (char** e = environ; e && *e; ++e) {
        const std::string_view entry(*e);
        const auto eq = entry.find('=');
        if (eq == std::string_view::npos) continue;
        const std::string_view name = entry.substr(0, eq);
        if (name.rfind(kEnvPrefix, 0) == 0) out.emplace(name, entry.substr(eq + 1));
    }
    return out;
}

RunConfig load_config(const std::filesystem::path& path) {
    std::string text;
    if (!path.empty()) {
        std::ifstream in(path, std::ios::binary);
        if (!in) throw Error("cannot read config " + path.string());
        std::ostringstream ss;
        ss << in.rdbuf();
        text = ss.str();
    }
    RunConfig config = config_from_json(text, environment_overrides());
    if (config.model.kind == "file" && !path.empty() && std::filesystem::path(config.model.path).is_relative())
        config.model.path = (path.parent_path() / config.model.path).string();
    return config;
}

CharacterModel build_model(const ModelSpec& spec, const std::filesystem::path& base_dir) {
    spec.validate();
    if (spec.kind == "chain") return build_chain(spec.links, spec.planar, spec.chain);
    if (spec.kind == "humanoid") return build_humanoid();
    std::filesystem::path p(spec.path);
    if (p.is_relative() && !base_dir.empty()) p = base_dir / p;
    std::ifstream in(p, std::ios::binary);
    if (!in) throw Error("cannot read model " + p.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return load_model(ss.str());
}

}  // namespace unicon
