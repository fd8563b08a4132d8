#include <fstream>
#include <set>

#include "fairspec/cli.hpp"
#include "fairspec/error.hpp"

namespace fairspec::cli {

using nlohmann::json;

std::string to_string(Command c) {
    switch (c) {
        case Command::synth: return "synth";
        case Command::train: return "train";
        case Command::finetune: return "finetune";
        case Command::eval: return "eval";
        case Command::bound: return "bound";
        case Command::sharpness: return "sharpness";
        case Command::nu_study: return "nu-study";
    }
    return "?";
}

Command command_from_string(const std::string& s) {
    for (Command c : {Command::synth, Command::train, Command::finetune, Command::eval, Command::bound,
                      Command::sharpness, Command::nu_study})
        if (to_string(c) == s) return c;
    throw ConfigError("unknown command '" + s + "'");
}

namespace {

// Reads one JSON object, remembering which keys were consumed so that
// leftovers can be reported as unknown.
class Section {
public:
    Section(const json* j, std::string path) : j_(j), path_(std::move(path)) {
        if (j_ && !j_->is_object()) throw ConfigError(where() + " must be an object");
    }

    bool present() const { return j_ != nullptr; }
    bool contains(const std::string& key) const { return j_ && j_->contains(key); }
    bool has(const std::string& key) const { return j_ && j_->contains(key) && !(*j_)[key].is_null(); }

    template <typename T>
    T req(const std::string& key) {
        if (!has(key)) throw ConfigError("missing required key '" + key_path(key) + "'");
        return get<T>(key);
    }

    template <typename T>
    T opt(const std::string& key, T fallback) {
        if (j_ && j_->contains(key)) seen_.insert(key);
        return has(key) ? get<T>(key) : fallback;
    }

    template <typename T>
    std::optional<T> maybe(const std::string& key) {
        if (j_ && j_->contains(key)) seen_.insert(key);
        if (!has(key)) return std::nullopt;
        return get<T>(key);
    }

    Section sub(const std::string& key, bool required) {
        if (j_ && j_->contains(key)) seen_.insert(key);
        if (!has(key)) {
            if (required) throw ConfigError("missing required key '" + key_path(key) + "'");
            return Section(nullptr, key_path(key));
        }
        return Section(&(*j_)[key], key_path(key));
    }

    void finish() const {
        if (!j_) return;
        for (const auto& [key, value] : j_->items())
            if (!seen_.count(key)) throw ConfigError("unknown key '" + key_path(key) + "'");
    }

    std::string key_path(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }

private:
    std::string where() const { return path_.empty() ? "config" : "'" + path_ + "'"; }

    template <typename T>
    T get(const std::string& key) {
        seen_.insert(key);
        const json& v = (*j_)[key];
        try {
            if constexpr (std::is_same_v<T, bool>) {
                if (!v.is_boolean()) throw ConfigError("");
            } else if constexpr (std::is_integral_v<T>) {
                if (!v.is_number_integer()) throw ConfigError("");
                if constexpr (std::is_unsigned_v<T>)
                    if (v.is_number_integer() && !v.is_number_unsigned() && v.get<long long>() < 0)
                        throw ConfigError("");
            } else if constexpr (std::is_floating_point_v<T>) {
                if (!v.is_number()) throw ConfigError("");
            } else if constexpr (std::is_same_v<T, std::string>) {
                if (!v.is_string()) throw ConfigError("");
            }
            return v.get<T>();
        } catch (const std::exception&) {
            throw ConfigError("key '" + key_path(key) + "' has the wrong type");
        }
    }

    const json* j_;
    std::string path_;
    std::set<std::string> seen_;
};

// Stream tags for seeds derived from the global seed.
constexpr std::uint64_t kTrainStream = 2;
constexpr std::uint64_t kAttackStream = 3;
constexpr std::uint64_t kEvalAttackStream = 4;

bool needs_data(Command c) { return c != Command::nu_study; }
bool needs_checkpoint(Command c) {
    return c == Command::finetune || c == Command::eval || c == Command::bound || c == Command::sharpness;
}

DataConfig parse_data(Section s, Command command) {
    DataConfig d;
    d.source = s.opt<std::string>("source", "blobs");
    d.seed = s.maybe<std::uint64_t>("seed");
    if (command == Command::synth && d.source != "blobs") throw ConfigError("synth needs data.source = blobs");
    if (d.source == "blobs") {
        auto b = s.sub("blobs", true);
        d.blobs.dim = b.req<int>("dim");
        d.blobs.num_classes = b.req<int>("num_classes");
        d.blobs.counts = b.req<std::vector<int>>("counts");
        d.blobs.centers_scale = b.opt<double>("centers_scale", 1.0);
        d.blobs.noise_std = b.opt<double>("noise_std", 0.1);
        d.test_counts = b.opt<std::vector<int>>("test_counts", {});
        b.finish();
        if (d.blobs.dim < 1 || d.blobs.num_classes < 2)
            throw ConfigError("data.blobs needs dim >= 1 and num_classes >= 2");
        if (static_cast<int>(d.blobs.counts.size()) != d.blobs.num_classes)
            throw ConfigError("data.blobs.counts needs one entry per class");
        if (!d.test_counts.empty() && static_cast<int>(d.test_counts.size()) != d.blobs.num_classes)
            throw ConfigError("data.blobs.test_counts needs one entry per class");
        for (int c : d.blobs.counts)
            if (c < 1) throw ConfigError("data.blobs.counts entries must be >= 1");
        for (int c : d.test_counts)
            if (c < 1) throw ConfigError("data.blobs.test_counts entries must be >= 1");
        if (!(d.blobs.noise_std >= 0) || !(d.blobs.centers_scale > 0))
            throw ConfigError("data.blobs needs noise_std >= 0 and centers_scale > 0");
    } else if (d.source == "csv") {
        d.train_csv = s.req<std::string>("train");
        d.test_csv = s.opt<std::string>("test", "");
    } else if (d.source == "mnist") {
        d.train_images = s.req<std::string>("train_images");
        d.train_labels = s.req<std::string>("train_labels");
        d.test_images = s.opt<std::string>("test_images", "");
        d.test_labels = s.opt<std::string>("test_labels", "");
        if (d.test_images.empty() != d.test_labels.empty())
            throw ConfigError("data.test_images and data.test_labels go together");
    } else {
        throw ConfigError("data.source must be blobs, csv or mnist");
    }
    s.finish();
    return d;
}

AttackConfig parse_attack(Section s, bool default_random_start, bool image_data, std::uint64_t seed) {
    AttackConfig a;
    a.norm = norm_from_string(s.opt<std::string>("norm", "linf"));
    a.epsilon = s.req<double>("epsilon");
    a.iters = s.opt<int>("iters", 10);
    const double default_step = a.epsilon > 0 && a.iters > 0 ? 2.5 * a.epsilon / a.iters : 1.0;
    a.step_size = s.opt<double>("step_size", default_step);
    a.random_start = s.opt<bool>("random_start", default_random_start);
    const bool clamp_given = s.contains("clamp");  // null disables the image default
    if (auto c = s.maybe<std::vector<double>>("clamp")) {
        if (c->size() != 2) throw ConfigError("key '" + s.key_path("clamp") + "' must be [lo, hi]");
        a.clamp = std::pair{(*c)[0], (*c)[1]};
    } else if (image_data && !clamp_given) {
        a.clamp = std::pair{0.0, 1.0};
    }
    a.check_projection = s.opt<bool>("check_projection", false);
    a.seed = seed;
    s.finish();
    a.validate();
    return a;
}

json attack_json(const AttackConfig& a) {
    json j = {{"norm", to_string(a.norm)},
              {"epsilon", a.epsilon},
              {"iters", a.iters},
              {"step_size", a.step_size},
              {"random_start", a.random_start},
              {"check_projection", a.check_projection}};
    j["clamp"] = a.clamp ? json::array({a.clamp->first, a.clamp->second}) : json(nullptr);
    return j;
}

}  // namespace

std::filesystem::path ExperimentConfig::resolve(const std::string& p) const {
    const std::filesystem::path path(p);
    return path.is_absolute() || base_dir.empty() ? path : base_dir / path;
}

ExperimentConfig parse_config(const json& j, Command command, const Overrides& ov,
                              const std::filesystem::path& base_dir) {
    ExperimentConfig c;
    c.command = command;
    c.base_dir = base_dir;
    Section root(&j, "");
    try {
        c.seed = root.opt<std::uint64_t>("seed", 0);
        c.threads = root.maybe<int>("threads");
        c.out = root.opt<std::string>("out", "");

        auto data = root.sub("data", needs_data(command));
        if (data.present()) c.data = parse_data(data, command);

        auto model = root.sub("model", command != Command::synth && command != Command::nu_study);
        if (model.present()) {
            if (command == Command::train)
                c.model.hidden = model.req<std::vector<int>>("hidden");
            else
                c.model.hidden = model.opt<std::vector<int>>("hidden", {});
            if (needs_checkpoint(command))
                c.model.checkpoint = model.req<std::string>("checkpoint");
            else
                c.model.checkpoint = model.opt<std::string>("checkpoint", "");
            model.finish();
            for (int w : c.model.hidden)
                if (w < 1) throw ConfigError("model.hidden widths must be >= 1");
        }

        if (ov.seed) c.seed = *ov.seed;
        if (ov.threads) c.threads = *ov.threads;
        if (ov.out) c.out = *ov.out;
        if (c.threads && *c.threads < 1) throw ConfigError("threads must be >= 1");

        const bool attack_needed = command == Command::train || command == Command::finetune ||
                                   command == Command::eval || command == Command::bound;
        auto attack = root.sub("attack", attack_needed);
        if (attack.present()) c.attack = parse_attack(attack, true, c.data.source == "mnist", derive_seed(c.seed, {kAttackStream}));
        auto eval_attack = root.sub("eval_attack", false);
        if (eval_attack.present()) {
            c.eval_attack = parse_attack(eval_attack, false, c.data.source == "mnist", derive_seed(c.seed, {kEvalAttackStream}));
        } else if (attack.present()) {
            c.eval_attack = c.attack;
            c.eval_attack->random_start = false;
            c.eval_attack->seed = derive_seed(c.seed, {kEvalAttackStream});
        }

        auto reg = root.sub("regularizer", false);
        c.reg.alpha = reg.opt<double>("alpha", 0.3);
        c.reg.gamma = reg.opt<double>("gamma", 0.0);
        c.reg.mode = reg_mode_from_string(reg.opt<std::string>("mode", "hybrid"));
        c.reg.stale_adversarial = reg.opt<bool>("stale_adversarial", false);
        reg.finish();
        c.reg.validate();

        auto tr = root.sub("train", command == Command::train);
        c.train = command == Command::finetune ? finetune_defaults() : TrainConfig{};
        if (command == Command::train)
            c.train.epochs = tr.req<int>("epochs");
        else
            c.train.epochs = tr.opt<int>("epochs", c.train.epochs);
        c.train.batch_size = tr.opt<int>("batch_size", c.train.batch_size);
        c.train.lr = tr.opt<double>("lr", c.train.lr);
        c.train.momentum = tr.opt<double>("momentum", c.train.momentum);
        c.train.weight_decay = tr.opt<double>("weight_decay", c.train.weight_decay);
        if (auto drops = tr.maybe<std::vector<std::pair<int, double>>>("lr_drops")) c.train.lr_drops = *drops;
        c.train.seed = derive_seed(c.seed, {kTrainStream});
        tr.finish();
        c.train.validate();

        auto bound = root.sub("bound", false);
        c.bound.gamma = bound.opt<double>("gamma", c.bound.gamma);
        c.bound.delta = bound.opt<double>("delta", c.bound.delta);
        c.bound.nu = bound.maybe<double>("nu");
        c.bound.linf_to_l2 = bound.opt<bool>("linf_to_l2", c.bound.linf_to_l2);
        bound.finish();
        if (!(c.bound.gamma > 0)) throw ConfigError("bound.gamma must be > 0");
        if (!(c.bound.delta > 0 && c.bound.delta < 1)) throw ConfigError("bound.delta must lie in (0, 1)");

        auto sharp = root.sub("sharpness", false);
        c.sharpness.grid = sharp.opt<std::vector<double>>("grid", c.sharpness.grid);
        c.sharpness.n_samples = sharp.opt<int>("n_samples", c.sharpness.n_samples);
        c.sharpness.drop_threshold = sharp.opt<double>("drop_threshold", c.sharpness.drop_threshold);
        const auto flavor = sharp.opt<std::string>("flavor", "robust");
        if (flavor != "clean" && flavor != "robust") throw ConfigError("sharpness.flavor must be clean or robust");
        c.sharpness.flavor = flavor == "clean" ? AccuracyFlavor::clean : AccuracyFlavor::robust;
        sharp.finish();
        if (command == Command::sharpness && c.sharpness.flavor == AccuracyFlavor::robust && !attack.present())
            throw ConfigError("missing required key 'attack' (sharpness.flavor = robust)");

        auto nu = root.sub("nu_study", false);
        c.nu.num_classes = nu.opt<int>("d_y", c.nu.num_classes);
        c.nu.trials = nu.opt<int>("trials", c.nu.trials);
        c.nu.generator = nu.opt<std::string>("generator", c.nu.generator);
        c.nu.bins = nu.opt<int>("bins", c.nu.bins);
        nu.finish();
        bool known = false;
        for (const auto& g : nu_generators()) known = known || g == c.nu.generator;
        if (!known) throw ConfigError("nu_study.generator '" + c.nu.generator + "' is not a known generator");
        if (c.nu.num_classes < 2 || c.nu.trials < 1 || c.nu.bins < 1)
            throw ConfigError("nu_study needs d_y >= 2, trials >= 1, bins >= 1");

        root.finish();
    } catch (const ConfigError&) {
        throw;
    } catch (const Error& e) {
        throw ConfigError(e.what());
    }
    return c;
}

ExperimentConfig load_config(const std::filesystem::path& path, Command command, const Overrides& overrides) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config " + path.string());
    json j;
    try {
        j = json::parse(in);
    } catch (const json::parse_error& e) {
        throw ConfigError(path.string() + ": " + e.what());
    }
    return parse_config(j, command, overrides, path.parent_path());
}

json ExperimentConfig::resolved() const {
    json j;
    j["command"] = to_string(command);
    j["seed"] = seed;
    if (command != Command::nu_study) {
        json d = {{"source", data.source}};
        if (data.seed) d["seed"] = *data.seed;
        if (data.source == "blobs") {
            d["blobs"] = {{"dim", data.blobs.dim},
                          {"num_classes", data.blobs.num_classes},
                          {"counts", data.blobs.counts},
                          {"test_counts", data.test_counts},
                          {"centers_scale", data.blobs.centers_scale},
                          {"noise_std", data.blobs.noise_std}};
        } else if (data.source == "csv") {
            d["train"] = data.train_csv;
            d["test"] = data.test_csv;
        } else {
            d["train_images"] = data.train_images;
            d["train_labels"] = data.train_labels;
            d["test_images"] = data.test_images;
            d["test_labels"] = data.test_labels;
        }
        j["data"] = d;
    }
    if (command == Command::synth) return j;
    if (command == Command::nu_study) {
        j["nu_study"] = {{"d_y", nu.num_classes}, {"trials", nu.trials}, {"generator", nu.generator}, {"bins", nu.bins}};
        return j;
    }
    j["model"] = {{"hidden", model.hidden}, {"checkpoint", model.checkpoint}};
    if (command != Command::sharpness || sharpness.flavor == AccuracyFlavor::robust) {
        j["attack"] = attack_json(attack);
        if (eval_attack) j["eval_attack"] = attack_json(*eval_attack);
    }
    if (command == Command::train || command == Command::finetune) {
        j["regularizer"] = {{"alpha", reg.alpha},
                            {"gamma", reg.gamma},
                            {"mode", to_string(reg.mode)},
                            {"stale_adversarial", reg.stale_adversarial}};
        j["train"] = {{"epochs", train.epochs},       {"batch_size", train.batch_size},
                      {"lr", train.lr},               {"momentum", train.momentum},
                      {"weight_decay", train.weight_decay}, {"lr_drops", train.lr_drops}};
    }
    if (command == Command::train || command == Command::finetune || command == Command::bound) {
        j["bound"] = {{"gamma", bound.gamma}, {"delta", bound.delta}, {"linf_to_l2", bound.linf_to_l2}};
        j["bound"]["nu"] = bound.nu ? json(*bound.nu) : json(nullptr);
    }
    if (command == Command::sharpness) {
        j["sharpness"] = {{"grid", sharpness.grid},
                          {"n_samples", sharpness.n_samples},
                          {"drop_threshold", sharpness.drop_threshold},
                          {"flavor", sharpness.flavor == AccuracyFlavor::clean ? "clean" : "robust"}};
    }
    return j;
}

}  // namespace fairspec::cli
