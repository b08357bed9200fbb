// Command-line entry points: train, eval, dataset, simtest, serve, config.

#include <atomic>
#include <chrono>
#include <csignal>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>
#include <thread>

#include "CLI11.hpp"
#include "json.hpp"
#include "unicon/config.hpp"
#include "unicon/error.hpp"
#include "unicon/selftest.hpp"
#include "unicon/server.hpp"
#include "unicon/synth.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace unicon;

namespace {

/// Bad flags or missing inputs; exit code 2.
class UsageError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

std::string one_line(std::string s) {
    for (char& c : s)
        if (c == '\n' || c == '\r') c = ' ';
    return s;
}

std::string read_text(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    if (!in) throw Error("cannot read " + p.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void write_text(const fs::path& p, const std::string& text) {
    if (p.has_parent_path()) fs::create_directories(p.parent_path());
    std::ofstream out(p, std::ios::binary);
    if (!out || !(out << text)) throw Error("cannot write " + p.string());
}

void require_file(const std::string& path, const char* what) {
    if (path.empty()) throw UsageError(std::string("missing ") + what);
    if (!fs::exists(path)) throw UsageError(std::string(what) + " " + path + " does not exist");
}

/// Clips for training or evaluation: a split of the manifest, else every clip.
std::vector<MotionClip> clips_of(const Dataset& ds, Split preferred) {
    std::vector<MotionClip> out;
    for (const MotionClip* c : ds.split(preferred)) out.push_back(*c);
    if (out.empty()) out = ds.clips;
    return out;
}

struct LoadedPolicy {
    GaussianPolicy policy;
    std::optional<RunningNormalizer> normalizer;
};

LoadedPolicy load_policy(const fs::path& checkpoint) {
    const TensorArchive ar = TensorArchive::load(checkpoint);
    LoadedPolicy lp{restore_policy(ar, "policy"), std::nullopt};
    if (ar.contains("normalize_observations") && ar.scalar("normalize_observations") != 0.0)
        lp.normalizer = restore_normalizer(ar, "normalizer");
    return lp;
}

/// --config, else config.json beside the checkpoint, else the defaults.
RunConfig config_for(const std::string& config, const std::string& checkpoint) {
    if (!config.empty()) {
        require_file(config, "config");
        return load_config(config);
    }
    if (!checkpoint.empty()) {
        const fs::path beside = fs::path(checkpoint).parent_path() / "config.json";
        if (fs::exists(beside)) return load_config(beside);
    }
    return load_config({});
}

std::string fixed(double v, int digits) {
    std::ostringstream s;
    s << std::fixed << std::setprecision(digits) << v;
    return s.str();
}

// ---------------------------------------------------------------------------

struct TrainArgs {
    std::string config, manifest, out, resume;
    int iterations = -1;
    std::int64_t seed = -1;
};

int cmd_train(const TrainArgs& a) {
    require_file(a.manifest, "dataset manifest");
    if (a.out.empty()) throw UsageError("missing output directory");
    RunConfig cfg = config_for(a.config, "");
    if (a.iterations >= 0) cfg.train.iterations = a.iterations;
    if (a.seed >= 0) cfg.train.seed = static_cast<std::uint64_t>(a.seed);
    cfg.validate();
    const Dataset ds = load_dataset(a.manifest);
    const CharacterModel model = build_model(cfg.model, a.config.empty() ? fs::path() : fs::path(a.config).parent_path());
    const fs::path out(a.out);
    fs::create_directories(out);
    write_text(out / "config.json", config_to_json(cfg) + "\n");
    write_text(out / "model.txt", save_model(model));

    Trainer trainer(model, clips_of(ds, Split::train), cfg.train);
    if (!a.resume.empty()) {
        require_file(a.resume, "checkpoint");
        trainer.load_checkpoint(TensorArchive::load(a.resume));
        std::cout << "resumed at iteration " << trainer.iteration() << "\n";
    }
    std::ofstream metrics(out / "metrics.jsonl", a.resume.empty() ? std::ios::trunc : std::ios::app);
    if (!metrics) throw Error("cannot write " + (out / "metrics.jsonl").string());
    std::cout << "training " << trainer.clips().size() << " clips, " << cfg.train.ppo.workers << " workers x "
              << cfg.train.ppo.samples_per_worker << " samples, " << cfg.train.iterations << " iterations\n";
    trainer.train(&metrics, out, [](const IterationMetrics& m) {
        std::size_t violations = 0;
        for (const auto& [cause, n] : m.causes)
            if (cause.rfind("term_violation", 0) == 0) violations += n;
        std::cout << "iter " << std::setw(5) << m.iteration << "  reward " << fixed(m.episode_reward_mean, 4)
                  << "  episodes " << std::setw(4) << m.episodes << "  violations " << std::setw(4) << violations
                  << "  kl " << std::scientific << std::setprecision(2) << m.kl << std::defaultfloat
                  << "  logstd " << fixed(m.logstd_mean, 3) << (m.update_skipped ? "  (update skipped)" : "")
                  << "\n" << std::flush;
    });
    std::cout << "wrote " << (out / "checkpoint.bin").string() << "\n";
    return 0;
}

// ---------------------------------------------------------------------------

struct EvalArgs {
    std::string checkpoint, config, manifest, clip, sidecar;
    double speed_ratio = 1.0;
    int impulse_period = 0;
    double impulse_mag = 0.0;
    double mass_scale = 1.0;
    int episodes = 4;
    std::int64_t seed = 1;
    bool sweep = false;
};

int cmd_eval(const EvalArgs& a) {
    require_file(a.checkpoint, "checkpoint");
    if (a.manifest.empty() == a.clip.empty()) throw UsageError("give exactly one of --manifest or --clip");
    const RunConfig cfg = config_for(a.config, a.checkpoint);
    const fs::path model_file = fs::path(a.checkpoint).parent_path() / "model.txt";
    const CharacterModel model =
        a.config.empty() && fs::exists(model_file) ? load_model(read_text(model_file)) : build_model(cfg.model);
    std::vector<MotionClip> clips;
    if (!a.manifest.empty()) {
        require_file(a.manifest, "dataset manifest");
        clips = clips_of(load_dataset(a.manifest), Split::test);
    } else {
        require_file(a.clip, "clip");
        MotionClip c = load_clip_file(a.clip);
        if (!c.has_velocities) c = derive_velocities(c);
        clips.push_back(std::move(c));
    }
    const LoadedPolicy lp = load_policy(a.checkpoint);
    const RunningNormalizer* norm = lp.normalizer ? &*lp.normalizer : nullptr;

    std::vector<EvalProtocol> protocols;
    if (a.sweep) {
        protocols = standard_sweep(a.impulse_mag > 0.0 ? a.impulse_mag : 1.0);
    } else {
        EvalProtocol p;
        p.speed_ratio = a.speed_ratio;
        p.impulse_period = a.impulse_period;
        p.impulse_magnitude = a.impulse_mag;
        p.mass_scale = a.mass_scale;
        protocols.push_back(p);
    }
    for (const auto& p : protocols) p.validate();
    if (a.episodes < 1) throw UsageError("--episodes must be at least 1");
    EvalOptions opts;
    opts.episodes = a.episodes;
    opts.seed = static_cast<std::uint64_t>(a.seed);

    std::cout << std::left << std::setw(28) << "setting" << std::right << std::setw(10) << "episodes" << std::setw(12)
              << "score" << std::setw(12) << "clean" << std::setw(12) << "relative" << std::setw(12) << "violations"
              << "\n";
    json rows = json::array();
    for (const auto& p : protocols) {
        const ProtocolReport r =
            evaluate_relative(lp.policy, norm, model, clips, cfg.train.task, cfg.train.ablation, p, opts);
        std::cout << std::left << std::setw(28) << p.label() << std::right << std::setw(10) << r.perturbed.episodes
                  << std::setw(12) << fixed(r.perturbed.mean_score, 4) << std::setw(12) << fixed(r.clean.mean_score, 4)
                  << std::setw(11) << fixed(100.0 * r.relative, 1) << "%" << std::setw(11)
                  << fixed(100.0 * r.perturbed.term_violation_rate, 1) << "%\n";
        rows.push_back({{"setting", p.label()},
                        {"speed_ratio", p.speed_ratio},
                        {"impulse_period", p.impulse_period},
                        {"impulse_magnitude", p.impulse_magnitude},
                        {"mass_scale", p.mass_scale},
                        {"episodes", r.perturbed.episodes},
                        {"score", r.perturbed.mean_score},
                        {"clean_score", r.clean.mean_score},
                        {"relative", r.relative},
                        {"term_violation_rate", r.perturbed.term_violation_rate}});
    }
    const fs::path sidecar = a.sidecar.empty() ? fs::path(a.checkpoint).replace_extension(".eval.json") : fs::path(a.sidecar);
    write_text(sidecar, json{{"checkpoint", a.checkpoint}, {"seed", a.seed}, {"rows", rows}}.dump(2) + "\n");
    std::cout << "sidecar " << sidecar.string() << "\n";
    return 0;
}

// ---------------------------------------------------------------------------

struct DatasetArgs {
    std::string manifest, out;
    double fraction = 0.8;
    std::int64_t seed = 1;
    int links = 3;
};

void print_stats(const char* name, const SplitStats& s) {
    std::cout << std::left << std::setw(8) << name << std::right << std::setw(10) << s.num_motions << std::setw(12)
              << s.num_frames << std::setw(14) << fixed(s.avg_length, 2) << "\n";
}

int cmd_dataset_stats(const DatasetArgs& a) {
    require_file(a.manifest, "dataset manifest");
    const DatasetStats s = stats(load_dataset(a.manifest));
    std::cout << std::left << std::setw(8) << "split" << std::right << std::setw(10) << "motions" << std::setw(12)
              << "frames" << std::setw(14) << "avg_length" << "\n";
    print_stats("all", s.all);
    print_stats("train", s.train);
    print_stats("test", s.test);
    return 0;
}

int cmd_dataset_split(const DatasetArgs& a) {
    require_file(a.manifest, "dataset manifest");
    if (a.out.empty()) throw UsageError("missing --out manifest path");
    const Dataset ds = load_dataset(a.manifest);
    const Dataset split = split_dataset(ds.clips, a.fraction, static_cast<std::uint64_t>(a.seed));
    Manifest m = parse_manifest(read_text(a.manifest));
    const fs::path from = fs::absolute(a.manifest).parent_path(), to = fs::absolute(a.out).parent_path();
    for (auto& e : m.entries) {
        e.split = split.train_ids.count(e.id) ? Split::train : split.test_ids.count(e.id) ? Split::test : Split::none;
        e.path = fs::relative(from / e.path, to).generic_string();
    }
    write_text(a.out, write_manifest(m));
    const DatasetStats s = stats(split);
    std::cout << "train " << s.train.num_motions << " clips / " << s.train.num_frames << " frames, test "
              << s.test.num_motions << " clips / " << s.test.num_frames << " frames -> " << a.out << "\n";
    return 0;
}

int cmd_dataset_balance(const DatasetArgs& a) {
    require_file(a.manifest, "dataset manifest");
    const Dataset ds = load_dataset(a.manifest);
    std::vector<const MotionClip*> ptrs;
    for (const auto& c : ds.clips) ptrs.push_back(&c);
    const SamplingTable t = build_probability_table(LabelTree::from_clips(ptrs));
    double total = 0.0;
    std::cout << std::left << std::setw(24) << "clip" << std::setw(32) << "label" << std::right << std::setw(12)
              << "probability" << "\n";
    for (std::size_t i = 0; i < t.size(); ++i) {
        const MotionClip* c = ds.find(t.clip_ids[i]);
        std::cout << std::left << std::setw(24) << t.clip_ids[i] << std::setw(32) << (c ? c->label() : "")
                  << std::right << std::setw(12) << fixed(t.probabilities[i], 6) << "\n";
        total += t.probabilities[i];
    }
    std::cout << "total " << fixed(total, 12) << "\n";
    return std::abs(total - 1.0) < 1e-9 ? 0 : 1;
}

/// Writes a small synthetic corpus for a planar chain: clips plus a manifest.
int cmd_dataset_synth(const DatasetArgs& a) {
    if (a.out.empty()) throw UsageError("missing --out directory");
    if (a.links < 1) throw UsageError("--links must be at least 1");
    ChainOptions o;
    o.armature = 0.1;
    const CharacterModel m = build_chain(a.links, true, o);
    std::vector<MotionClip> clips;
    clips.push_back(sway_clip(m, 4.0));
    clips.push_back(squat_clip(m, 4.0));
    MotionClip slow = sway_clip(m, 4.0, 60.0, 0.2, 0.25);
    slow.id = "sway_slow";
    clips.push_back(slow);
    MotionClip deep = squat_clip(m, 4.0, 60.0, 0.7, 0.4);
    deep.id = "squat_deep";
    clips.push_back(deep);
    auto add = [&](const std::string& id, std::vector<std::string> label, double amp, double freq, double phase) {
        MotionClip c = sinusoid_clip(m, id, amp, freq, phase, 3.0);
        c.label_path = std::move(label);
        clips.push_back(std::move(c));
    };
    add("wave_a", {"root", "wave", "small"}, 0.2, 0.6, 0.0);
    add("wave_b", {"root", "wave", "small"}, 0.25, 0.7, 0.4);
    add("wave_c", {"root", "wave", "large"}, 0.4, 0.5, 0.8);
    add("reach", {"root", "reach"}, 0.35, 0.3, 1.2);
    const fs::path dir(a.out);
    fs::create_directories(dir);
    Dataset ds;
    for (const auto& c : clips) save_clip_file(c, dir / (c.id + ".clip"));
    ds.clips = clips;
    write_text(dir / "manifest.json", write_manifest(manifest_for(ds)));
    write_text(dir / "model.txt", save_model(m));
    std::cout << "wrote " << clips.size() << " clips to " << dir.string() << "\n";
    return 0;
}

// ---------------------------------------------------------------------------

int report(const SelfTestReport& r) {
    std::cout << r.name << ": " << r.value << " (threshold " << r.threshold << ") " << (r.passed() ? "PASS" : "FAIL")
              << "\n  " << r.detail << "\n";
    return r.passed() ? 0 : 1;
}

// ---------------------------------------------------------------------------

std::atomic<bool> g_stop{false};

extern "C" void on_signal(int) { g_stop = true; }

struct ServeArgs {
    std::string config, checkpoint, manifest, model, log;
    int port = -2, udp_port = -2;
    double tick_rate = 0.0;
    int perturb_period = -1;
    double perturb_mag = -1.0;
    double duration = 0.0;
};

int cmd_serve(const ServeArgs& a) {
    RunConfig cfg = config_for(a.config, a.checkpoint);
    if (a.port != -2) cfg.serve.server.port = a.port;
    if (a.udp_port != -2) cfg.serve.server.udp_port = a.udp_port;
    if (a.tick_rate > 0.0) cfg.serve.server.tick_rate = a.tick_rate;
    if (a.perturb_period >= 0) cfg.serve.perturbation.period = a.perturb_period;
    if (a.perturb_mag >= 0.0) cfg.serve.perturbation.magnitude = a.perturb_mag;
    cfg.validate();

    CharacterModel model;
    if (!a.model.empty()) {
        require_file(a.model, "model file");
        model = load_model(read_text(a.model));
    } else if (const fs::path beside = fs::path(a.checkpoint).parent_path() / "model.txt";
               !a.checkpoint.empty() && fs::exists(beside)) {
        model = load_model(read_text(beside));
    } else {
        model = build_model(cfg.model);
    }
    std::vector<MotionClip> library;
    if (!a.manifest.empty()) {
        require_file(a.manifest, "dataset manifest");
        library = load_dataset(a.manifest).clips;
    }
    const SessionConfig sc = cfg.session();
    const int targets = sc.ablation.targets == TargetMode::lookahead ? 1
                        : sc.ablation.targets == TargetMode::next ? sc.task.encoder.tau
                                                                  : sc.ablation.k;
    LoadedPolicy lp;
    if (!a.checkpoint.empty()) {
        require_file(a.checkpoint, "checkpoint");
        lp = load_policy(a.checkpoint);
    } else {
        Rng rng(cfg.train.seed);
        lp.policy = GaussianPolicy::create(
            static_cast<int>(observation_size(model.num_joints(), static_cast<std::size_t>(targets))),
            model.num_actuated(), cfg.train.ppo.hidden, rng);
        std::cerr << "serve: no checkpoint given, serving an untrained policy\n";
    }

    std::ofstream log_file;
    std::ostream* log = &std::cerr;
    if (!a.log.empty()) {
        log_file.open(a.log, std::ios::app);
        if (!log_file) throw Error("cannot write " + a.log);
        log = &log_file;
    }
    Server server(Session(model, lp.policy, lp.normalizer, library, sc), cfg.serve.server, log);
    server.start();
    std::cout << "listening on " << cfg.serve.server.address << ":" << server.port() << " (websocket, /health)";
    if (server.udp_port() >= 0) std::cout << ", poses on udp " << server.udp_port();
    std::cout << "\n" << std::flush;

    std::signal(SIGINT, on_signal);
    std::signal(SIGTERM, on_signal);
    const auto start = std::chrono::steady_clock::now();
    while (!g_stop) {
        if (a.duration > 0.0 &&
            std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count() >= a.duration)
            break;
        std::this_thread::sleep_for(std::chrono::milliseconds(50));
    }
    server.stop();
    const ServerStats s = server.stats();
    std::cout << "stopped after " << s.ticks << " ticks, " << s.frames_sent << " messages sent\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Two-level motion control: train, evaluate and serve tracking policies"};
    app.require_subcommand(1);
    app.set_version_flag("--version", std::string(kVersion));

    TrainArgs ta;
    auto* train = app.add_subcommand("train", "Train a tracking policy on a dataset");
    train->add_option("--config", ta.config, "Run config (JSON)");
    train->add_option("--manifest", ta.manifest, "Dataset manifest");
    train->add_option("--out", ta.out, "Output directory");
    train->add_option("--resume", ta.resume, "Checkpoint to resume from");
    train->add_option("--iterations", ta.iterations, "Override the iteration count");
    train->add_option("--seed", ta.seed, "Override the seed");

    EvalArgs ea;
    auto* eval = app.add_subcommand("eval", "Evaluate a checkpoint under perturbation protocols");
    eval->add_option("--checkpoint", ea.checkpoint, "Policy checkpoint");
    eval->add_option("--config", ea.config, "Run config (default: config.json beside the checkpoint)");
    eval->add_option("--manifest", ea.manifest, "Dataset manifest (test split, else all clips)");
    eval->add_option("--clip", ea.clip, "Single clip file");
    eval->add_option("--speed-ratio", ea.speed_ratio, "Playback speed ratio");
    eval->add_option("--impulse-period", ea.impulse_period, "Steps between impulses (0: none)");
    eval->add_option("--impulse-mag", ea.impulse_mag, "Impulse magnitude, N s");
    eval->add_option("--mass-scale", ea.mass_scale, "Body mass factor");
    eval->add_option("--episodes", ea.episodes, "Episodes per clip");
    eval->add_option("--seed", ea.seed, "Seed");
    eval->add_flag("--sweep", ea.sweep, "One row per standard speed and impulse setting");
    eval->add_option("--sidecar", ea.sidecar, "JSON report path (default: <checkpoint>.eval.json)");

    DatasetArgs da;
    auto* dataset = app.add_subcommand("dataset", "Dataset tools");
    dataset->require_subcommand(1);
    auto* d_stats = dataset->add_subcommand("stats", "Clip and frame counts per split");
    auto* d_split = dataset->add_subcommand("split", "Assign train/test splits and write a manifest");
    auto* d_balance = dataset->add_subcommand("balance-check", "Per-clip sampling probabilities");
    auto* d_synth = dataset->add_subcommand("synth", "Write a synthetic chain corpus");
    for (auto* s : {d_stats, d_split, d_balance}) s->add_option("--manifest", da.manifest, "Dataset manifest");
    d_split->add_option("--fraction", da.fraction, "Train fraction of frames");
    d_split->add_option("--seed", da.seed, "Seed");
    d_split->add_option("--out", da.out, "Output manifest");
    d_synth->add_option("--out", da.out, "Output directory");
    d_synth->add_option("--links", da.links, "Chain links");

    auto* simtest = app.add_subcommand("simtest", "Simulator and optimizer self-checks");
    simtest->require_subcommand(1);
    std::int64_t st_seed = 1;
    double st_seconds = 10.0;
    auto* s_energy = simtest->add_subcommand("energy", "Double pendulum energy drift (limit 2%)");
    s_energy->add_option("--seconds", st_seconds, "Simulated time");
    auto* s_grad = simtest->add_subcommand("gradcheck", "Analytic vs finite-difference gradients (limit 1e-4)");
    s_grad->add_option("--seed", st_seed, "Seed");
    auto* s_det = simtest->add_subcommand("determinism", "Rerun and compare bit for bit");
    s_det->add_option("--seed", st_seed, "Seed");

    ServeArgs sa;
    auto* serve = app.add_subcommand("serve", "Run the interactive session server");
    serve->add_option("--config", sa.config, "Run config");
    serve->add_option("--checkpoint", sa.checkpoint, "Policy checkpoint");
    serve->add_option("--manifest", sa.manifest, "Clip library manifest");
    serve->add_option("--model", sa.model, "Model file");
    serve->add_option("--port", sa.port, "Websocket/HTTP port (0: any free port)");
    serve->add_option("--udp-port", sa.udp_port, "Pose datagram port (-1: off)");
    serve->add_option("--tick-rate", sa.tick_rate, "Ticks per second");
    serve->add_option("--perturb-period", sa.perturb_period, "Ticks between scheduled impulses (0: off)");
    serve->add_option("--perturb-mag", sa.perturb_mag, "Scheduled impulse magnitude, N s");
    serve->add_option("--log", sa.log, "Log file (default: stderr)");
    serve->add_option("--duration", sa.duration, "Stop after this many seconds (0: until a signal)");

    std::string cfg_path;
    auto* config = app.add_subcommand("config", "Print the resolved config (defaults plus file and UNICON_ variables)");
    config->add_option("--config", cfg_path, "Run config");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForVersion& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        std::cerr << "unicon: error: usage: " << one_line(e.what()) << "\n";
        return 2;
    }

    try {
        if (*train) return cmd_train(ta);
        if (*eval) return cmd_eval(ea);
        if (*d_stats) return cmd_dataset_stats(da);
        if (*d_split) return cmd_dataset_split(da);
        if (*d_balance) return cmd_dataset_balance(da);
        if (*d_synth) return cmd_dataset_synth(da);
        if (*s_energy) return report(energy_check(st_seconds));
        if (*s_grad) return report(gradient_check(static_cast<std::uint64_t>(st_seed)));
        if (*s_det) return report(determinism_check(static_cast<std::uint64_t>(st_seed)));
        if (*serve) return cmd_serve(sa);
        if (*config) {
            if (!cfg_path.empty()) require_file(cfg_path, "config");
            std::cout << config_to_json(load_config(cfg_path)) << "\n";
            return 0;
        }
    } catch (const UsageError& e) {
        std::cerr << "unicon: error: usage: " << one_line(e.what()) << "\n";
        return 2;
    } catch (const ParseError& e) {
        std::cerr << "unicon: error: parse: " << one_line(e.what()) << "\n";
        return 1;
    } catch (const InvalidArgument& e) {
        std::cerr << "unicon: error: invalid: " << one_line(e.what()) << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "unicon: error: runtime: " << one_line(e.what()) << "\n";
        return 1;
    }
    return 0;
}
