#include "fedleak/config.hpp"

#include <algorithm>
#include <fstream>
#include <set>
#include <sstream>

#include "fedleak/data.hpp"
#include "fedleak/error.hpp"
#include "fedleak/jsonfmt.hpp"

namespace fedleak::config {

namespace {

std::string trim(const std::string& s) {
    std::size_t a = s.find_first_not_of(" \t\r\n");
    if (a == std::string::npos) return "";
    std::size_t b = s.find_last_not_of(" \t\r\n");
    return s.substr(a, b - a + 1);
}

std::vector<std::string> split(const std::string& s, char sep) {
    std::vector<std::string> out;
    std::string cur;
    for (char c : s) {
        if (c == sep) {
            out.push_back(trim(cur));
            cur.clear();
        } else {
            cur += c;
        }
    }
    out.push_back(trim(cur));
    return out;
}

long to_int(const std::string& key, const std::string& v) {
    try {
        std::size_t used = 0;
        long r = std::stol(v, &used);
        if (used != v.size()) throw std::invalid_argument("");
        return r;
    } catch (...) {
        throw ConfigError("config: key '" + key + "' expects an integer, got '" + v + "'");
    }
}

double to_double(const std::string& key, const std::string& v) {
    try {
        std::size_t used = 0;
        double r = std::stod(v, &used);
        if (used != v.size()) throw std::invalid_argument("");
        return r;
    } catch (...) {
        throw ConfigError("config: key '" + key + "' expects a number, got '" + v + "'");
    }
}

bool to_bool(const std::string& key, const std::string& v) {
    if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
    if (v == "false" || v == "0" || v == "no" || v == "off") return false;
    throw ConfigError("config: key '" + key + "' expects a boolean, got '" + v + "'");
}

}  // namespace

RawConfig parse_ini(const std::string& text) {
    RawConfig raw;
    std::istringstream in(text);
    std::string line, section;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const std::size_t hash = line.find_first_of("#;");
        if (hash != std::string::npos) line = line.substr(0, hash);
        line = trim(line);
        if (line.empty()) continue;
        if (line.front() == '[') {
            if (line.back() != ']')
                throw ConfigError("config: malformed section header on line " +
                                  std::to_string(lineno));
            section = trim(line.substr(1, line.size() - 2));
            raw.sections[section];
            continue;
        }
        const std::size_t eq = line.find('=');
        if (eq == std::string::npos)
            throw ConfigError("config: expected 'key = value' on line " + std::to_string(lineno));
        const std::string key = trim(line.substr(0, eq));
        const std::string value = trim(line.substr(eq + 1));
        if (key.empty())
            throw ConfigError("config: empty key on line " + std::to_string(lineno));
        raw.sections[section][key] = value;
    }
    return raw;
}

RawConfig parse_ini_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("config: cannot open '" + path + "'");
    std::stringstream ss;
    ss << in.rdbuf();
    return parse_ini(ss.str());
}

defenses::DefenseConfig parse_defense_spec(const std::string& spec) {
    defenses::DefenseConfig d;
    const std::size_t colon = spec.find(':');
    const std::string kind = colon == std::string::npos ? spec : spec.substr(0, colon);
    const std::string arg = colon == std::string::npos ? "" : spec.substr(colon + 1);
    if (kind == "none") {
        if (!arg.empty()) throw ConfigError("config: defense 'none' takes no argument");
        d.kind = defenses::DefenseKind::kNone;
        return d;
    }
    if (kind == "laplace" || kind == "gaussian") {
        d.kind = kind == "laplace" ? defenses::DefenseKind::kLaplace
                                   : defenses::DefenseKind::kGaussian;
        if (arg.rfind("level", 0) == 0) {
            d.level = int(to_int("defense.grid", arg.substr(5)));
        } else if (!arg.empty()) {
            d.scale = to_double("defense.grid", arg);
        } else {
            throw ConfigError("config: defense '" + kind + "' needs a scale or levelN argument");
        }
        d.validate();
        return d;
    }
    if (kind == "topk") {
        d.kind = defenses::DefenseKind::kTopk;
        if (arg.empty()) throw ConfigError("config: defense 'topk' needs a keep fraction");
        d.keep_fraction = to_double("defense.grid", arg);
        d.validate();
        return d;
    }
    throw ConfigError("config: unknown defense kind '" + kind + "'");
}

std::string defense_tag(const defenses::DefenseConfig& d) {
    switch (d.kind) {
        case defenses::DefenseKind::kNone: return "none";
        case defenses::DefenseKind::kLaplace:
        case defenses::DefenseKind::kGaussian: {
            const std::string kind = defenses::kind_name(d.kind);
            if (d.level.has_value()) return kind + ":level" + std::to_string(*d.level);
            return kind + ":" + jsonfmt::g9(d.scale.value_or(0.0));
        }
        case defenses::DefenseKind::kTopk: return "topk:" + jsonfmt::g9(d.keep_fraction);
    }
    return "?";
}

namespace {

// Every accepted key, per section; anything else is rejected by name.
const std::map<std::string, std::set<std::string>> kKnownKeys = {
    {"dataset", {"kind", "count", "classes", "dir", "normalize"}},
    {"model", {"arch", "channels", "height", "width", "classes", "activation", "seed"}},
    {"train", {"epochs", "lr", "seed"}},
    {"fl", {"clients", "rounds", "lr", "batch"}},
    {"attack",
     {"method", "iters", "lr", "init", "tv_weight", "checkpoint_every", "success_ssim",
      "tolerance", "lbfgs_history"}},
    {"defense", {"grid"}},
    {"run", {"images", "seeds", "output", "workers", "checkpoints"}},
};

}  // namespace

ExperimentConfig resolve_config(const RawConfig& raw) {
    for (const auto& [section, entries] : raw.sections) {
        auto known = kKnownKeys.find(section);
        if (known == kKnownKeys.end())
            throw ConfigError("config: unknown section '[" + section + "]'");
        for (const auto& [key, value] : entries)
            if (!known->second.count(key))
                throw ConfigError("config: unknown key '" + section + "." + key + "'");
    }

    ExperimentConfig cfg;
    auto get = [&](const std::string& section, const std::string& key) -> const std::string* {
        auto s = raw.sections.find(section);
        if (s == raw.sections.end()) return nullptr;
        auto k = s->second.find(key);
        return k == s->second.end() ? nullptr : &k->second;
    };

    if (const auto* v = get("dataset", "kind")) {
        if (*v == "phantom") {
            cfg.dataset.kind = DatasetCfg::Kind::kPhantom;
        } else if (*v == "directory" || *v == "dir") {
            cfg.dataset.kind = DatasetCfg::Kind::kDirectory;
        } else {
            throw ConfigError("config: dataset.kind must be 'phantom' or 'directory', got '" + *v +
                              "'");
        }
    }
    if (const auto* v = get("dataset", "count")) cfg.dataset.count = int(to_int("dataset.count", *v));
    if (const auto* v = get("dataset", "classes"))
        cfg.dataset.classes = int(to_int("dataset.classes", *v));
    if (const auto* v = get("dataset", "dir")) cfg.dataset.dir = *v;
    if (const auto* v = get("dataset", "normalize"))
        cfg.dataset.normalize = to_bool("dataset.normalize", *v);

    if (const auto* v = get("model", "arch")) cfg.model.arch = nn::arch_from_name(*v);
    if (const auto* v = get("model", "channels"))
        cfg.model.channels = std::size_t(to_int("model.channels", *v));
    if (const auto* v = get("model", "height"))
        cfg.model.height = std::size_t(to_int("model.height", *v));
    if (const auto* v = get("model", "width"))
        cfg.model.width = std::size_t(to_int("model.width", *v));
    if (const auto* v = get("model", "classes"))
        cfg.model.num_classes = std::size_t(to_int("model.classes", *v));
    if (const auto* v = get("model", "activation")) {
        if (*v == "sigmoid") {
            cfg.model.activation = nn::Activation::kSigmoid;
        } else if (*v == "relu") {
            cfg.model.activation = nn::Activation::kRelu;
        } else {
            throw ConfigError("config: model.activation must be 'sigmoid' or 'relu', got '" + *v +
                              "'");
        }
    }
    if (const auto* v = get("model", "seed"))
        cfg.model_seed = std::uint64_t(to_int("model.seed", *v));

    if (raw.sections.count("train")) {
        cfg.train.enabled = true;
        if (const auto* v = get("train", "epochs")) cfg.train.epochs = int(to_int("train.epochs", *v));
        if (const auto* v = get("train", "lr")) cfg.train.lr = float(to_double("train.lr", *v));
        if (const auto* v = get("train", "seed"))
            cfg.train.seed = std::uint64_t(to_int("train.seed", *v));
    }

    if (const auto* v = get("fl", "clients")) cfg.fl.clients = int(to_int("fl.clients", *v));
    if (const auto* v = get("fl", "rounds")) cfg.fl.rounds = int(to_int("fl.rounds", *v));
    if (const auto* v = get("fl", "lr")) cfg.fl.lr = float(to_double("fl.lr", *v));
    if (const auto* v = get("fl", "batch")) cfg.fl.batch = int(to_int("fl.batch", *v));

    attacks::AttackMethod method = attacks::AttackMethod::kDlg;
    if (const auto* v = get("attack", "method")) method = attacks::method_from_name(*v);
    cfg.attack = attacks::default_config(method);
    if (const auto* v = get("attack", "iters"))
        cfg.attack.optimizer.max_iters = int(to_int("attack.iters", *v));
    if (const auto* v = get("attack", "lr")) cfg.attack.optimizer.lr = to_double("attack.lr", *v);
    if (const auto* v = get("attack", "tolerance"))
        cfg.attack.optimizer.tolerance = to_double("attack.tolerance", *v);
    if (const auto* v = get("attack", "lbfgs_history"))
        cfg.attack.optimizer.lbfgs_history = int(to_int("attack.lbfgs_history", *v));
    if (const auto* v = get("attack", "init")) {
        if (*v == "gaussian") {
            cfg.attack.init = attacks::InitKind::kGaussian;
        } else if (*v == "uniform") {
            cfg.attack.init = attacks::InitKind::kUniform;
        } else if (*v == "patterned") {
            cfg.attack.init = attacks::InitKind::kPatterned;
        } else if (v->rfind("constant:", 0) == 0) {
            cfg.attack.init = attacks::InitKind::kConstant;
            cfg.attack.init_constant = float(to_double("attack.init", v->substr(9)));
        } else {
            throw ConfigError("config: attack.init must be gaussian|uniform|patterned|constant:V");
        }
    }
    if (const auto* v = get("attack", "tv_weight"))
        cfg.attack.tv_weight = to_double("attack.tv_weight", *v);
    if (const auto* v = get("attack", "checkpoint_every"))
        cfg.attack.checkpoint_every = int(to_int("attack.checkpoint_every", *v));
    if (const auto* v = get("attack", "success_ssim"))
        cfg.attack.success_ssim = to_double("attack.success_ssim", *v);

    if (const auto* v = get("defense", "grid")) {
        for (const auto& spec : split(*v, ','))
            if (!spec.empty()) cfg.defense_grid.push_back(parse_defense_spec(spec));
    }
    if (cfg.defense_grid.empty()) cfg.defense_grid.push_back(defenses::DefenseConfig{});

    if (const auto* v = get("run", "images")) cfg.images = int(to_int("run.images", *v));
    if (const auto* v = get("run", "seeds")) {
        for (const auto& s : split(*v, ','))
            if (!s.empty()) cfg.seeds.push_back(std::uint64_t(to_int("run.seeds", s)));
    }
    if (cfg.seeds.empty()) cfg.seeds.push_back(1);
    if (const auto* v = get("run", "output")) cfg.output_dir = *v;
    if (const auto* v = get("run", "workers")) cfg.workers = int(to_int("run.workers", *v));
    if (const auto* v = get("run", "checkpoints")) {
        if (*v != "first" && *v != "all" && *v != "none")
            throw ConfigError("config: run.checkpoints must be first|all|none");
        cfg.checkpoints = *v;
    }

    cfg.validate();
    return cfg;
}

void ExperimentConfig::validate() const {
    if (dataset.kind == DatasetCfg::Kind::kPhantom) {
        if (dataset.count < 1) throw ConfigError("config: dataset.count must be >= 1");
        if (dataset.classes < 1 || dataset.classes > data::kPhantomClasses)
            throw ConfigError("config: dataset.classes must lie in [1, 4]");
    } else if (dataset.dir.empty()) {
        throw ConfigError("config: dataset.dir required for directory datasets");
    }
    if (model.num_classes < 2) throw ConfigError("config: model.classes must be >= 2");
    if (fl.clients < 1) throw ConfigError("config: fl.clients must be >= 1");
    if (fl.rounds < 0) throw ConfigError("config: fl.rounds must be >= 0");
    if (fl.batch < 1) throw ConfigError("config: fl.batch must be >= 1");
    if (train.enabled && train.epochs < 0) throw ConfigError("config: train.epochs must be >= 0");
    if (images < 0) throw ConfigError("config: run.images must be >= 0");
    if (workers < 0) throw ConfigError("config: run.workers must be >= 0");
    if (seeds.empty()) throw ConfigError("config: run.seeds must not be empty");
    try {
        attack.validate();
        for (const auto& d : defense_grid) d.validate();
    } catch (const ValidationError& e) {
        throw ConfigError(std::string("config: ") + e.what());
    }
}

std::string manifest_json(const ExperimentConfig& cfg) {
    using jsonfmt::g9_json;
    using jsonfmt::str;
    std::string j = "{\n";
    j += "  \"dataset\": {";
    if (cfg.dataset.kind == DatasetCfg::Kind::kPhantom) {
        j += "\"kind\": \"phantom\", \"count\": " + std::to_string(cfg.dataset.count) +
             ", \"classes\": " + std::to_string(cfg.dataset.classes);
    } else {
        j += "\"kind\": \"directory\", \"dir\": " + str(cfg.dataset.dir);
    }
    j += ", \"normalize\": " + std::string(cfg.dataset.normalize ? "true" : "false") + "},\n";
    j += "  \"model\": {\"arch\": " + str(nn::arch_name(cfg.model.arch)) +
         ", \"channels\": " + std::to_string(cfg.model.channels) +
         ", \"height\": " + std::to_string(cfg.model.height) +
         ", \"width\": " + std::to_string(cfg.model.width) +
         ", \"classes\": " + std::to_string(cfg.model.num_classes) + ", \"activation\": " +
         str(cfg.model.activation == nn::Activation::kSigmoid ? "sigmoid" : "relu") +
         ", \"seed\": " + std::to_string(cfg.model_seed) + "},\n";
    if (cfg.train.enabled) {
        j += "  \"train\": {\"epochs\": " + std::to_string(cfg.train.epochs) +
             ", \"lr\": " + g9_json(cfg.train.lr) + ", \"seed\": " + std::to_string(cfg.train.seed) +
             "},\n";
    }
    j += "  \"fl\": {\"clients\": " + std::to_string(cfg.fl.clients) +
         ", \"rounds\": " + std::to_string(cfg.fl.rounds) + ", \"lr\": " + g9_json(cfg.fl.lr) +
         ", \"batch\": " + std::to_string(cfg.fl.batch) + "},\n";
    j += "  \"attack\": {\"method\": " + str(attacks::method_name(cfg.attack.method)) +
         ", \"iters\": " + std::to_string(cfg.attack.optimizer.max_iters) +
         ", \"lr\": " + g9_json(cfg.attack.optimizer.lr) +
         ", \"tolerance\": " + g9_json(cfg.attack.optimizer.tolerance) +
         ", \"lbfgs_history\": " + std::to_string(cfg.attack.optimizer.lbfgs_history) +
         ", \"init\": " +
         str(cfg.attack.init == attacks::InitKind::kGaussian    ? "gaussian"
             : cfg.attack.init == attacks::InitKind::kUniform   ? "uniform"
             : cfg.attack.init == attacks::InitKind::kPatterned ? "patterned"
                                                                : "constant") +
         ", \"init_constant\": " + g9_json(cfg.attack.init_constant) +
         ", \"tv_weight\": " + g9_json(cfg.attack.tv_weight) +
         ", \"checkpoint_every\": " + std::to_string(cfg.attack.checkpoint_every) +
         ", \"success_ssim\": " + g9_json(cfg.attack.success_ssim) + "},\n";
    j += "  \"defense_grid\": [";
    for (std::size_t i = 0; i < cfg.defense_grid.size(); ++i) {
        if (i) j += ", ";
        j += str(defense_tag(cfg.defense_grid[i]));
    }
    j += "],\n";
    j += "  \"run\": {\"images\": " + std::to_string(cfg.images) + ", \"seeds\": [";
    for (std::size_t i = 0; i < cfg.seeds.size(); ++i) {
        if (i) j += ", ";
        j += std::to_string(cfg.seeds[i]);
    }
    j += "], \"output\": " + str(cfg.output_dir) + ", \"workers\": " + std::to_string(cfg.workers) +
         ", \"checkpoints\": " + str(cfg.checkpoints) + "}\n";
    j += "}\n";
    return j;
}

}  // namespace fedleak::config
