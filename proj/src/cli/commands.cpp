#include <spdlog/spdlog.h>

#include <chrono>
#include <cmath>
#include <fstream>

#include "fairspec/checkpoint.hpp"
#include "fairspec/cli.hpp"
#include "fairspec/error.hpp"
#include "fairspec/eval.hpp"
#include "fairspec/parallel.hpp"

namespace fairspec::cli {

using nlohmann::json;

namespace {

// Stream tags shared with config.cpp (2, 3, 4 are taken there).
constexpr std::uint64_t kInitStream = 1;
constexpr std::uint64_t kSharpnessStream = 5;
constexpr std::uint64_t kNuStream = 6;

struct Data {
    Dataset train;
    std::optional<Dataset> test;
};

class Artifacts {
public:
    explicit Artifacts(const ExperimentConfig& cfg) : dir_(cfg.out), config_(cfg.resolved()) {
        if (cfg.out.empty()) throw ConfigError("missing required key 'out' (or pass --out)");
        std::filesystem::create_directories(dir_);
    }

    std::filesystem::path path(const std::string& name) const { return dir_ / name; }
    const json& config() const { return config_; }
    std::string config_line() const { return "config=" + config_.dump(); }

    void text(const std::string& name, const std::string& body) const {
        std::ofstream out(path(name), std::ios::binary);
        if (!out) throw Error("cannot write " + path(name).string());
        out << body;
        spdlog::info("wrote {}", path(name).string());
    }
    void csv(const std::string& name, const std::string& body) const { text(name, "# " + config_line() + "\n" + body); }
    void json_file(const std::string& name, json body) const {
        body["config"] = config_;
        text(name, body.dump(2) + "\n");
    }
    void resolved_config() const { text("config.resolved.json", config_.dump(2) + "\n"); }

private:
    std::filesystem::path dir_;
    json config_;
};

std::uint64_t data_seed(const ExperimentConfig& cfg) { return cfg.data.seed.value_or(cfg.seed); }

BlobParams test_params(const DataConfig& d) {
    BlobParams p = d.blobs;
    if (!d.test_counts.empty()) p.counts = d.test_counts;
    return p;
}

Data load_data(const ExperimentConfig& cfg) {
    const auto& d = cfg.data;
    Data out;
    if (d.source == "blobs") {
        out.train = synth_blobs(d.blobs, data_seed(cfg), 0);
        out.test = synth_blobs(test_params(d), data_seed(cfg), 1);
    } else if (d.source == "csv") {
        out.train = read_dataset_csv(cfg.resolve(d.train_csv));
        if (!d.test_csv.empty()) out.test = read_dataset_csv(cfg.resolve(d.test_csv));
    } else {
        out.train = load_mnist_idx(cfg.resolve(d.train_images), cfg.resolve(d.train_labels));
        if (!d.test_images.empty())
            out.test = load_mnist_idx(cfg.resolve(d.test_images), cfg.resolve(d.test_labels));
    }
    out.train.validate(true);
    if (out.test) {
        out.test->validate(false);
        if (out.test->dim() != out.train.dim() || out.test->num_classes != out.train.num_classes)
            throw DimensionMismatch("test set does not match the training set's shape");
    }
    spdlog::info("data: {} train samples, {} test samples, d = {}, d_y = {}", out.train.size(),
                 out.test ? out.test->size() : 0, out.train.dim(), out.train.num_classes);
    return out;
}

Net load_model(const ExperimentConfig& cfg, const Dataset& ds) {
    Net net = load_checkpoint(cfg.resolve(cfg.model.checkpoint)).net;
    if (net.input_dim() != ds.dim() || net.output_dim() != ds.num_classes)
        throw DimensionMismatch("checkpoint does not match the dataset's dimensions");
    return net;
}

double bound_epsilon(const ExperimentConfig& cfg, int dim) {
    const double eps = cfg.attack.epsilon;
    if (cfg.attack.norm == Norm::l2) return eps;
    if (cfg.bound.linf_to_l2) return eps * std::sqrt(static_cast<double>(dim));
    spdlog::warn("bound: using the linf radius {} as an l2 radius", eps);
    return eps;
}

// Returns the bound artifact and whether the bound was feasible.
std::pair<json, bool> bound_artifact(const ExperimentConfig& cfg, const Net& net, const Dataset& train) {
    const Dataset adv = adversarial_set(net, train, *cfg.eval_attack);
    const ConfusionMatrix c = confusion_margin(net, adv, cfg.bound.gamma);
    const double conf_spec = spectral_norm(c.m);
    const double conf_l1 = l1_matrix_norm(c.m);
    const ClassStats stats = class_stats(train);

    json j;
    j["attack_norm"] = to_string(cfg.attack.norm);
    j["attack_epsilon"] = cfg.attack.epsilon;
    j["epsilon_l2"] = bound_epsilon(cfg, train.dim());
    j["worst_class_conf"] = conf_l1;
    j["nu_empirical"] = conf_spec > 0 ? json(conf_l1 / conf_spec) : json(nullptr);
    if (stats.input_radius > 0) j["sigma_star"] = sigma_star(net, cfg.bound.gamma, stats.input_radius);
    try {
        const auto report =
            bound_value(conf_spec, net, stats, cfg.bound.gamma, cfg.bound.delta, j["epsilon_l2"].get<double>(),
                        cfg.bound.nu);
        j["feasible"] = true;
        j["bound"] = report.to_json();
        return {j, true};
    } catch (const InfeasibleBound& e) {
        j["feasible"] = false;
        j["reason"] = e.what();
        j["conf_spec"] = conf_spec;
        spdlog::warn("{}", e.what());
        return {j, false};
    }
}

void write_eval(const Artifacts& out, const ExperimentConfig& cfg, const Net& net, const Data& data) {
    const Dataset& eval_ds = data.test ? *data.test : data.train;
    const auto report = evaluate(net, eval_ds, *cfg.eval_attack, &data.train);
    out.csv("eval_per_class.csv", per_class_csv(report));
    out.csv("eval_summary.csv", summary_csv(report));
    spdlog::info("eval: avg robust {:.4f}, worst robust {:.4f}", report.avg_robust(), report.worst_robust());
}

void cmd_synth(const ExperimentConfig& cfg, const Artifacts& out) {
    const auto seed = data_seed(cfg);
    const Dataset train = synth_blobs(cfg.data.blobs, seed, 0);
    const Dataset test = synth_blobs(test_params(cfg.data), seed, 1);
    write_dataset_csv(out.path("train.csv"), train, seed, out.config_line());
    write_dataset_csv(out.path("test.csv"), test, seed, out.config_line());
    out.resolved_config();
}

void cmd_train(const ExperimentConfig& cfg, const Artifacts& out) {
    const Data data = load_data(cfg);
    Net net;
    if (cfg.command == Command::finetune) {
        net = load_model(cfg, data.train);
    } else {
        std::vector<int> dims{data.train.dim()};
        dims.insert(dims.end(), cfg.model.hidden.begin(), cfg.model.hidden.end());
        dims.push_back(data.train.num_classes);
        net = Net::he_init(dims, derive_seed(cfg.seed, {kInitStream}));
    }
    TrainInputs inputs{data.train, data.test ? &*data.test : nullptr, cfg.attack, cfg.eval_attack, {}};
    auto result = cfg.command == Command::finetune ? finetune(std::move(net), inputs, cfg.reg, cfg.train)
                                                   : train(std::move(net), inputs, cfg.reg, cfg.train);

    save_checkpoint(out.path("model.ckpt"), result.net, out.config());
    out.csv("history.csv", result.history.to_csv());
    write_eval(out, cfg, result.net, data);
    out.json_file("bound.json", bound_artifact(cfg, result.net, data.train).first);
    out.resolved_config();
}

void cmd_eval(const ExperimentConfig& cfg, const Artifacts& out) {
    const Data data = load_data(cfg);
    write_eval(out, cfg, load_model(cfg, data.train), data);
    out.resolved_config();
}

void cmd_bound(const ExperimentConfig& cfg, const Artifacts& out) {
    const Data data = load_data(cfg);
    auto [j, feasible] = bound_artifact(cfg, load_model(cfg, data.train), data.train);
    out.json_file("bound.json", j);
    out.resolved_config();
    if (!feasible) throw InfeasibleBound(j["reason"].get<std::string>());
}

void cmd_sharpness(const ExperimentConfig& cfg, const Artifacts& out) {
    const Data data = load_data(cfg);
    const Net net = load_model(cfg, data.train);
    SharpnessOptions opt;
    opt.grid = cfg.sharpness.grid;
    opt.n_samples = cfg.sharpness.n_samples;
    opt.drop_threshold = cfg.sharpness.drop_threshold;
    opt.flavor = cfg.sharpness.flavor;
    opt.seed = derive_seed(cfg.seed, {kSharpnessStream});
    if (cfg.eval_attack) opt.attack = *cfg.eval_attack;
    out.json_file("sharpness.json", sharpness_variance(net, data.train, opt).to_json());
    out.resolved_config();
}

void cmd_nu_study(const ExperimentConfig& cfg, const Artifacts& out) {
    const auto report =
        nu_study(cfg.nu.num_classes, cfg.nu.trials, derive_seed(cfg.seed, {kNuStream}), cfg.nu.generator, cfg.nu.bins);
    spdlog::info("nu: mean {:.4f}, max {:.4f} over {} trials", report.mean_nu, report.max_nu, report.trials);
    out.json_file("nu_study.json", report.to_json());
    out.csv("nu_histogram.csv", report.histogram_csv());
    out.resolved_config();
}

}  // namespace

void execute(const ExperimentConfig& cfg) {
    if (cfg.threads) set_max_threads(*cfg.threads);
    const Artifacts out(cfg);
    spdlog::info("{}: seed {}, config {}", to_string(cfg.command), cfg.seed, cfg.resolved().dump());
    const auto start = std::chrono::steady_clock::now();
    switch (cfg.command) {
        case Command::synth: cmd_synth(cfg, out); break;
        case Command::train:
        case Command::finetune: cmd_train(cfg, out); break;
        case Command::eval: cmd_eval(cfg, out); break;
        case Command::bound: cmd_bound(cfg, out); break;
        case Command::sharpness: cmd_sharpness(cfg, out); break;
        case Command::nu_study: cmd_nu_study(cfg, out); break;
    }
    const std::chrono::duration<double> took = std::chrono::steady_clock::now() - start;
    spdlog::info("{} finished in {:.2f} s", to_string(cfg.command), took.count());
}

int run(Command command, const std::filesystem::path& config_path, const Overrides& overrides) {
    ExperimentConfig cfg;
    try {
        cfg = load_config(config_path, command, overrides);
    } catch (const ConfigError& e) {
        spdlog::error("invalid configuration: {}", e.what());
        return 2;
    }
    try {
        execute(cfg);
    } catch (const ConfigError& e) {
        spdlog::error("invalid configuration: {}", e.what());
        return 2;
    } catch (const std::exception& e) {
        spdlog::error("{} failed: {}", to_string(command), e.what());
        return 1;
    }
    return 0;
}

}  // namespace fairspec::cli
