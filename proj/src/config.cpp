#include "drpose/config.hpp"

#include <charconv>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>

#include "drpose/error.hpp"

namespace drpose {

std::string strategy_name(Strategy s) {
    switch (s) {
        case Strategy::Single: return "single";
        case Strategy::Average: return "average";
        case Strategy::Aggregate: return "aggregate";
        case Strategy::BestOf: return "best-of";
    }
    return "?";
}

Strategy parse_strategy(const std::string& name) {
    for (Strategy s : {Strategy::Single, Strategy::Average, Strategy::Aggregate, Strategy::BestOf})
        if (strategy_name(s) == name) return s;
    throw UsageError("unknown strategy '" + name + "' (expected single, average, aggregate or best-of)");
}

namespace {

std::string fmt(double v) {
    char buf[64];
    auto [end, ec] = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, end);
}

std::string fmt(std::size_t v) { return std::to_string(v); }

template <class T>
T parse_number(const std::string& key, const std::string& text) {
    T v{};
    auto [end, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
    if (ec != std::errc() || end != text.data() + text.size() || text.empty())
        throw UsageError("config key '" + key + "': cannot parse '" + text + "'");
    return v;
}

bool parse_bool(const std::string& key, const std::string& text) {
    if (text == "true" || text == "1") return true;
    if (text == "false" || text == "0") return false;
    throw UsageError("config key '" + key + "': expected true or false, got '" + text + "'");
}

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return "";
    return s.substr(b, s.find_last_not_of(" \t\r") - b + 1);
}

struct Entry {
    ConfigKey key;
    std::function<std::string(const RunConfig&)> get;
    std::function<void(RunConfig&, const std::string&)> set;
};

// `field` maps a config to one of its members; getters only read through it.
template <class Field>
Entry size_entry(std::string name, std::string desc, Field field) {
    return {{name, std::move(desc)},
            [field](const RunConfig& c) { return fmt(field(const_cast<RunConfig&>(c))); },
            [field, name](RunConfig& c, const std::string& v) { field(c) = parse_number<std::size_t>(name, v); }};
}

template <class Field>
Entry real_entry(std::string name, std::string desc, Field field) {
    return {{name, std::move(desc)},
            [field](const RunConfig& c) { return fmt(field(const_cast<RunConfig&>(c))); },
            [field, name](RunConfig& c, const std::string& v) { field(c) = parse_number<double>(name, v); }};
}

#define FIELD(expr) [](RunConfig& c) -> auto& { return expr; }

std::vector<Entry> build_entries() {
    std::vector<Entry> e;
    e.push_back(size_entry("data.train_count", "training samples", FIELD(c.train_count)));
    e.push_back(size_entry("data.val_count", "validation samples", FIELD(c.val_count)));
    e.push_back(size_entry("data.test_count", "test samples", FIELD(c.test_count)));
    e.push_back(real_entry("data.noise_sigma_px", "detector noise on 2D inputs, pixels", FIELD(c.noise_sigma_px)));
    e.push_back(real_entry("camera.fx", "focal length x, pixels", FIELD(c.camera.fx)));
    e.push_back(real_entry("camera.fy", "focal length y, pixels", FIELD(c.camera.fy)));
    e.push_back(real_entry("camera.cx", "principal point x", FIELD(c.camera.cx)));
    e.push_back(real_entry("camera.cy", "principal point y", FIELD(c.camera.cy)));
    e.push_back(real_entry("camera.root_depth", "root depth, mm", FIELD(c.camera.root_depth)));

    e.push_back(size_entry("model.channels", "token width", FIELD(c.model.channels)));
    e.push_back(size_entry("model.blocks", "SGCT blocks", FIELD(c.model.blocks)));
    e.push_back(size_entry("model.heads", "attention heads", FIELD(c.model.heads)));
    e.push_back(size_entry("model.time_embed_dim", "sinusoidal timestep features", FIELD(c.model.time_embed_dim)));
    e.push_back(size_entry("model.mlp_ratio", "feed-forward expansion", FIELD(c.model.mlp_ratio)));
    e.push_back(size_entry("model.initial_layers", "initial predictor graph layers", FIELD(c.model.initial_layers)));
    e.push_back(size_entry("model.prm_hidden", "gate MLP hidden width", FIELD(c.model.prm_hidden)));
    e.push_back({{"model.learnable_adjacency", "train an additive adjacency offset"},
                 [](const RunConfig& c) { return std::string(c.model.learnable_adjacency ? "true" : "false"); },
                 [](RunConfig& c, const std::string& v) {
                     c.model.learnable_adjacency = parse_bool("model.learnable_adjacency", v);
                 }});

    e.push_back(size_entry("diffusion.T", "maximum diffusion timestep", FIELD(c.train.T)));
    e.push_back(real_entry("diffusion.offset", "cosine schedule offset s", FIELD(c.offset)));
    e.push_back(size_entry("diffusion.t_start", "timestep the reverse process starts from", FIELD(c.t_start)));
    e.push_back({{"diffusion.start", "starting state: diffused (initial pose + noise) or noise"},
                 [](const RunConfig& c) {
                     return std::string(c.reverse.start == StartState::PureNoise ? "noise" : "diffused");
                 },
                 [](RunConfig& c, const std::string& v) {
                     if (v == "noise") c.reverse.start = StartState::PureNoise;
                     else if (v == "diffused") c.reverse.start = StartState::DiffusedInitial;
                     else throw UsageError("diffusion.start must be noise or diffused, got '" + v + "'");
                 }});
    e.push_back({{"diffusion.renoise", "between iterations: marginal or posterior"},
                 [](const RunConfig& c) {
                     return std::string(c.reverse.renoise == Renoise::Marginal ? "marginal" : "posterior");
                 },
                 [](RunConfig& c, const std::string& v) {
                     if (v == "marginal") c.reverse.renoise = Renoise::Marginal;
                     else if (v == "posterior") c.reverse.renoise = Renoise::Posterior;
                     else throw UsageError("diffusion.renoise must be marginal or posterior, got '" + v + "'");
                 }});

    e.push_back(size_entry("train.epochs", "refinement epochs", FIELD(c.train.epochs)));
    e.push_back(size_entry("train.pretrain_epochs", "initial predictor epochs", FIELD(c.pretrain_epochs)));
    e.push_back(size_entry("train.batch_size", "batch size", FIELD(c.train.batch_size)));
    e.push_back(real_entry("train.base_lr", "learning rate at epoch 0", FIELD(c.train.base_lr)));
    e.push_back(real_entry("train.epoch_decay", "per-epoch lr factor", FIELD(c.train.epoch_decay)));
    e.push_back(real_entry("train.period_decay", "extra lr factor every decay_period epochs", FIELD(c.train.period_decay)));
    e.push_back(size_entry("train.decay_period", "epochs between period decays", FIELD(c.train.decay_period)));
    e.push_back({{"train.joint_weights", "comma-separated per-joint loss weights"},
                 [](const RunConfig& c) {
                     std::string out;
                     for (std::size_t i = 0; i < c.train.joint_weights.size(); ++i)
                         out += (i ? "," : "") + fmt(c.train.joint_weights[i]);
                     return out;
                 },
                 [](RunConfig& c, const std::string& v) {
                     std::vector<double> w;
                     std::stringstream ss(v);
                     for (std::string item; std::getline(ss, item, ',');)
                         w.push_back(parse_number<double>("train.joint_weights", trim(item)));
                     c.train.joint_weights = std::move(w);
                 }});
    e.push_back(real_entry("train.adam_beta1", "Adam first-moment decay", FIELD(c.train.adam_beta1)));
    e.push_back(real_entry("train.adam_beta2", "Adam second-moment decay", FIELD(c.train.adam_beta2)));
    e.push_back(real_entry("train.adam_eps", "Adam epsilon", FIELD(c.train.adam_eps)));

    e.push_back(size_entry("infer.H", "hypotheses per sample", FIELD(c.H)));
    e.push_back(size_entry("infer.K", "denoising iterations per hypothesis", FIELD(c.K)));
    e.push_back({{"infer.strategy", "single, average, aggregate or best-of"},
                 [](const RunConfig& c) { return strategy_name(c.strategy); },
                 [](RunConfig& c, const std::string& v) { c.strategy = parse_strategy(v); }});
    e.push_back({{"infer.split", "dataset split to run on: val or test"},
                 [](const RunConfig& c) { return c.split; },
                 [](RunConfig& c, const std::string& v) { c.split = v; }});
    e.push_back(size_entry("infer.chunk", "network batch size at inference", FIELD(c.chunk)));

    e.push_back({{"run.seed", "seed for data, initialization, training and sampling"},
                 [](const RunConfig& c) { return std::to_string(c.train.seed); },
                 [](RunConfig& c, const std::string& v) { c.train.seed = parse_number<std::uint64_t>("run.seed", v); }});
    e.push_back(size_entry("run.threads", "worker threads", FIELD(c.threads)));
    e.push_back({{"run.out_dir", "parent directory of run directories"},
                 [](const RunConfig& c) { return c.out_dir; },
                 [](RunConfig& c, const std::string& v) { c.out_dir = v; }});
    return e;
}
#undef FIELD

const std::vector<Entry>& entries() {
    static const std::vector<Entry> e = build_entries();
    return e;
}

const Entry& find_entry(const std::string& key) {
    for (const auto& e : entries())
        if (e.key.name == key) return e;
    throw UsageError("unknown config key '" + key + "'");
}

}  // namespace

void RunConfig::validate() const {
    model.validate();
    train.validate(model.joints);
    camera.validate();
    if (train_count == 0 || val_count == 0 || test_count == 0) throw UsageError("data counts must be >= 1");
    if (!(noise_sigma_px >= 0.0)) throw UsageError("data.noise_sigma_px must be >= 0");
    if (!(offset > 0.0)) throw UsageError("diffusion.offset must be positive");
    if (t_start < 1 || t_start > train.T) throw UsageError("diffusion.t_start must lie in [1, T]");
    if (pretrain_epochs < 1) throw UsageError("train.pretrain_epochs must be >= 1");
    if (H < 1 || K < 1) throw UsageError("infer.H and infer.K must be >= 1");
    if (split != "val" && split != "test") throw UsageError("infer.split must be val or test");
    if (chunk < 1) throw UsageError("infer.chunk must be >= 1");
    if (threads < 1) throw UsageError("run.threads must be >= 1");
}

const std::vector<ConfigKey>& config_keys() {
    static const std::vector<ConfigKey> keys = [] {
        std::vector<ConfigKey> k;
        for (const auto& e : entries()) k.push_back(e.key);
        return k;
    }();
    return keys;
}

std::string config_get(const RunConfig& c, const std::string& key) { return find_entry(key).get(c); }

void config_set(RunConfig& c, const std::string& key, const std::string& value) { find_entry(key).set(c, value); }

RunConfig parse_config(const std::string& text, RunConfig base) {
    std::istringstream in(text);
    std::string section;
    std::size_t lineno = 0;
    for (std::string line; std::getline(in, line);) {
        ++lineno;
        if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
        line = trim(line);
        if (line.empty()) continue;
        if (line.front() == '[') {
            if (line.back() != ']') throw UsageError("config line " + std::to_string(lineno) + ": bad section header");
            section = trim(line.substr(1, line.size() - 2));
            continue;
        }
        const auto eq = line.find('=');
        if (eq == std::string::npos)
            throw UsageError("config line " + std::to_string(lineno) + ": expected key = value");
        const std::string key = trim(line.substr(0, eq));
        if (section.empty())
            throw UsageError("config line " + std::to_string(lineno) + ": key '" + key + "' outside a section");
        config_set(base, section + "." + key, trim(line.substr(eq + 1)));
    }
    return base;
}

RunConfig load_config(const std::filesystem::path& path, RunConfig base) {
    std::ifstream in(path);
    if (!in) throw DataError(path.string() + ": cannot open config file");
    std::stringstream ss;
    ss << in.rdbuf();
    try {
        return parse_config(ss.str(), std::move(base));
    } catch (const UsageError& e) {
        throw UsageError(path.string() + ": " + e.what());
    }
}

std::string dump_config(const RunConfig& c) {
    std::string out, section;
    for (const auto& e : entries()) {
        const auto dot = e.key.name.find('.');
        const std::string sec = e.key.name.substr(0, dot);
        if (sec != section) {
            out += (section.empty() ? "[" : "\n[") + sec + "]\n";
            section = sec;
        }
        out += e.key.name.substr(dot + 1) + " = " + e.get(c) + "\n";
    }
    return out;
}

std::string config_help() {
    const RunConfig defaults;
    std::string out = "Config keys (section.key = default):\n";
    for (const auto& e : entries()) {
        std::string line = "  " + e.key.name + " = " + e.get(defaults);
        if (line.size() < 44) line.resize(44, ' ');
        out += line + "  " + e.key.description + "\n";
    }
    return out;
}

}  // namespace drpose
