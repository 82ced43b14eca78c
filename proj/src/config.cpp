#include "dmplug/config.hpp"

#include <json.hpp>

#include <algorithm>
#include <fstream>
#include <sstream>

namespace dmplug {

namespace {

using ordered_json = nlohmann::ordered_json;

ordered_json to_ojson(const ExperimentConfig& c) {
    ordered_json j;
    j["task"] = c.task;
    j["seed"] = c.seed;
    j["out"] = c.out;
    j["side"] = c.side;
    j["substeps"] = c.substeps;
    j["schedule"] = {{"T", c.schedule.T},
                     {"beta_start", c.schedule.beta_start},
                     {"beta_end", c.schedule.beta_end}};
    j["prior"] = {{"kind", c.prior.kind},
                  {"rank", c.prior.rank},
                  {"strength", c.prior.strength},
                  {"path", c.prior.path}};
    j["operator"] = {{"factor", c.op.factor},
                     {"drop_fraction", c.op.drop_fraction},
                     {"kernel_side", c.op.kernel_side},
                     {"kernel_sigma", c.op.kernel_sigma},
                     {"gamma", c.op.gamma},
                     {"blind_side", c.op.blind_side},
                     {"max_tilt", c.op.max_tilt},
                     {"tilt_strength", c.op.tilt_strength}};
    j["noise"] = {{"kind", c.noise.kind},
                  {"level", c.noise.level},
                  {"param", c.noise.param}};
    j["solver"] = {{"optimizer", c.solver.optimizer},
                   {"max_iters", c.solver.max_iters},
                   {"lr_z", c.solver.lr_z},
                   {"lr_logits", c.solver.lr_logits},
                   {"lr_tilt", c.solver.lr_tilt},
                   {"metrics_every", c.solver.metrics_every},
                   {"record_fbe", c.solver.record_fbe},
                   {"es", {{"enabled", c.solver.es.enabled},
                           {"window", c.solver.es.window},
                           {"patience", c.solver.es.patience}}}};
    j["baseline"] = {{"zeta_prime", c.baseline.zeta_prime},
                     {"variant", c.baseline.variant},
                     {"substeps", c.baseline.substeps}};
    j["train"] = {{"steps", c.train.steps},
                  {"batch", c.train.batch},
                  {"lr", c.train.lr},
                  {"widths", c.train.widths},
                  {"embed_dim", c.train.embed_dim},
                  {"count", c.train.count}};
    j["sample"] = {{"count", c.sample.count}};
    j["spectra"] = {{"image", c.spectra.image},
                    {"reference", c.spectra.reference}};
    return j;
}

[[noreturn]] void bad(const std::string& field, const std::string& why) {
    throw ConfigError("config field '" + field + "': " + why);
}

// Overlay the user document onto the defaults, rejecting structure the
// defaults do not have. `where` tracks the dotted path for diagnostics.
void merge(ordered_json& base, const ordered_json& user,
           const std::string& where) {
    if (!user.is_object())
        bad(where.empty() ? "(root)" : where, "expected an object");
    for (const auto& [key, val] : user.items()) {
        std::string path = where.empty() ? key : where + "." + key;
        auto it = base.find(key);
        if (it == base.end()) bad(path, "unknown key");
        ordered_json& slot = *it;
        if (slot.is_object()) {
            merge(slot, val, path);
        } else if (slot.is_boolean()) {
            if (!val.is_boolean()) bad(path, "expected true or false");
            slot = val;
        } else if (slot.is_string()) {
            if (!val.is_string()) bad(path, "expected a string");
            slot = val;
        } else if (slot.is_array()) {
            if (!val.is_array()) bad(path, "expected an array of integers");
            for (const auto& e : val)
                if (!e.is_number_integer())
                    bad(path, "expected an array of integers");
            slot = val;
        } else if (slot.is_number_unsigned()) {
            if (!val.is_number_integer() && !val.is_number_unsigned())
                bad(path, "expected a non-negative integer");
            if (val.is_number_integer() && val.get<int64_t>() < 0)
                bad(path, "expected a non-negative integer");
            slot = val.get<uint64_t>();
        } else if (slot.is_number_integer()) {
            if (!val.is_number_integer()) bad(path, "expected an integer");
            slot = val;
        } else { // floating point; integers promote
            if (!val.is_number()) bad(path, "expected a number");
            slot = val.get<double>();
        }
    }
}

template <typename T> T field(const ordered_json& j, const char* k) {
    return j.at(k).get<T>();
}

ExperimentConfig from_ojson(const ordered_json& j) {
    ExperimentConfig c;
    c.task = field<std::string>(j, "task");
    c.seed = field<uint64_t>(j, "seed");
    c.out = field<std::string>(j, "out");
    c.side = field<int>(j, "side");
    c.substeps = field<int>(j, "substeps");
    const auto& js = j.at("schedule");
    c.schedule = {field<int>(js, "T"), field<double>(js, "beta_start"),
                  field<double>(js, "beta_end")};
    const auto& jp = j.at("prior");
    c.prior = {field<std::string>(jp, "kind"), field<int>(jp, "rank"),
               field<double>(jp, "strength"), field<std::string>(jp, "path")};
    const auto& jo = j.at("operator");
    c.op = {field<int>(jo, "factor"),        field<double>(jo, "drop_fraction"),
            field<int>(jo, "kernel_side"),   field<double>(jo, "kernel_sigma"),
            field<double>(jo, "gamma"),      field<int>(jo, "blind_side"),
            field<double>(jo, "max_tilt"),   field<double>(jo, "tilt_strength")};
    const auto& jn = j.at("noise");
    c.noise = {field<std::string>(jn, "kind"), field<std::string>(jn, "level"),
               field<double>(jn, "param")};
    const auto& jv = j.at("solver");
    c.solver.optimizer = field<std::string>(jv, "optimizer");
    c.solver.max_iters = field<int>(jv, "max_iters");
    c.solver.lr_z = field<double>(jv, "lr_z");
    c.solver.lr_logits = field<double>(jv, "lr_logits");
    c.solver.lr_tilt = field<double>(jv, "lr_tilt");
    c.solver.metrics_every = field<int>(jv, "metrics_every");
    c.solver.record_fbe = field<bool>(jv, "record_fbe");
    const auto& je = jv.at("es");
    c.solver.es = {field<bool>(je, "enabled"), field<int>(je, "window"),
                   field<int>(je, "patience")};
    const auto& jb = j.at("baseline");
    c.baseline = {field<double>(jb, "zeta_prime"),
                  field<std::string>(jb, "variant"), field<int>(jb, "substeps")};
    const auto& jt = j.at("train");
    c.train = {field<int>(jt, "steps"),      field<int>(jt, "batch"),
               field<double>(jt, "lr"),      field<std::vector<int>>(jt, "widths"),
               field<int>(jt, "embed_dim"),  field<int>(jt, "count")};
    c.sample = {field<int>(j.at("sample"), "count")};
    const auto& jc = j.at("spectra");
    c.spectra = {field<std::string>(jc, "image"),
                 field<std::string>(jc, "reference")};
    return c;
}

bool one_of(const std::string& v, std::initializer_list<const char*> set) {
    return std::any_of(set.begin(), set.end(),
                       [&](const char* s) { return v == s; });
}

} // namespace

void validate_config(const ExperimentConfig& c) {
    if (!one_of(c.task, {"sr", "inpaint", "nblur", "bid", "turbulence",
                         "regress", "denoise"}))
        bad("task", "unknown task '" + c.task + "'");
    if (c.side < 2) bad("side", "must be at least 2");
    if (c.schedule.T < 1) bad("schedule.T", "must be positive");
    if (!(c.schedule.beta_start > 0.0 &&
          c.schedule.beta_start <= c.schedule.beta_end &&
          c.schedule.beta_end < 1.0))
        bad("schedule", "need 0 < beta_start <= beta_end < 1");
    if (c.substeps < 1 || c.substeps > c.schedule.T)
        bad("substeps", "must be in 1..schedule.T");

    if (!one_of(c.prior.kind, {"smooth", "isotropic", "checkpoint"}))
        bad("prior.kind", "unknown prior '" + c.prior.kind + "'");
    if (c.prior.kind == "checkpoint" && c.prior.path.empty())
        bad("prior.path", "checkpoint prior needs a file path");
    if (c.prior.rank < 1) bad("prior.rank", "must be positive");
    if (c.prior.kind == "smooth" && c.prior.rank > c.side * c.side - 1)
        bad("prior.rank", "smooth prior supports at most side*side-1 modes");
    if (c.prior.strength <= 0.0) bad("prior.strength", "must be positive");

    if (c.op.factor < 1) bad("operator.factor", "must be at least 1");
    if (c.task == "sr" && c.side % c.op.factor != 0)
        bad("operator.factor", "must divide the image side");
    if (c.op.drop_fraction < 0.0 || c.op.drop_fraction >= 1.0)
        bad("operator.drop_fraction", "must be in [0, 1)");
    for (auto [name, v] : {std::pair<const char*, int>{"operator.kernel_side",
                                                       c.op.kernel_side},
                           {"operator.blind_side", c.op.blind_side}}) {
        if (v < 1 || v % 2 == 0) bad(name, "must be odd and positive");
        if (v > c.side) bad(name, "must not exceed the image side");
    }
    if (c.op.kernel_sigma <= 0.0) bad("operator.kernel_sigma", "must be positive");
    if (c.op.gamma <= 0.0) bad("operator.gamma", "must be positive");
    if (c.op.max_tilt <= 0.0) bad("operator.max_tilt", "must be positive");
    if (c.op.tilt_strength < 0.0)
        bad("operator.tilt_strength", "must be non-negative");

    if (!one_of(c.noise.kind, {"default", "none", "gaussian_sigma",
                               "gaussian_var", "impulse", "shot", "speckle"}))
        bad("noise.kind", "unknown noise kind '" + c.noise.kind + "'");
    if (!one_of(c.noise.level, {"low", "high"}))
        bad("noise.level", "must be 'low' or 'high'");
    if (c.noise.kind == "gaussian_sigma" && c.noise.param < 0.0)
        bad("noise.param", "gaussian_sigma has no presets; set param");

    if (!one_of(c.solver.optimizer, {"adam", "lbfgs"}))
        bad("solver.optimizer", "must be 'adam' or 'lbfgs'");
    if ((c.task == "bid" || c.task == "turbulence") &&
        c.solver.optimizer != "adam")
        bad("solver.optimizer",
            "task '" + c.task + "' optimizes blind variables and needs adam");
    if (c.solver.max_iters < 0) bad("solver.max_iters", "must be non-negative");
    if (c.solver.lr_z <= 0.0) bad("solver.lr_z", "must be positive");
    if (c.solver.lr_logits <= 0.0) bad("solver.lr_logits", "must be positive");
    if (c.solver.lr_tilt <= 0.0) bad("solver.lr_tilt", "must be positive");
    if (c.solver.metrics_every < 1)
        bad("solver.metrics_every", "must be at least 1");
    if (c.solver.es.window != -1 && c.solver.es.window < 2)
        bad("solver.es.window", "must be at least 2 (or -1 for the default)");
    if (c.solver.es.patience != -1 && c.solver.es.patience < 1)
        bad("solver.es.patience", "must be at least 1 (or -1 for the default)");

    if (c.baseline.zeta_prime < 0.0)
        bad("baseline.zeta_prime", "must be non-negative");
    if (!one_of(c.baseline.variant, {"gradient", "projection"}))
        bad("baseline.variant", "must be 'gradient' or 'projection'");
    if (c.baseline.substeps < 0 || c.baseline.substeps > c.schedule.T)
        bad("baseline.substeps", "must be in 0..schedule.T");

    if (c.train.steps < 0) bad("train.steps", "must be non-negative");
    if (c.train.batch < 1) bad("train.batch", "must be positive");
    if (c.train.lr <= 0.0) bad("train.lr", "must be positive");
    if (c.train.widths.empty()) bad("train.widths", "need at least one layer");
    for (int w : c.train.widths)
        if (w < 1) bad("train.widths", "layer widths must be positive");
    if (c.train.embed_dim < 1) bad("train.embed_dim", "must be positive");
    if (c.train.count < 1) bad("train.count", "must be positive");
    if (c.sample.count < 1) bad("sample.count", "must be positive");
}

ExperimentConfig parse_config_text(const std::string& text) {
    ordered_json user;
    try {
        user = ordered_json::parse(text);
    } catch (const ordered_json::parse_error& e) {
        size_t limit = std::min<size_t>(e.byte, text.size());
        long line = 1 + std::count(text.begin(),
                                   text.begin() + static_cast<long>(limit), '\n');
        throw ConfigError("config syntax error at line " + std::to_string(line) +
                          ": " + e.what());
    }
    ordered_json base = to_ojson(ExperimentConfig{});
    merge(base, user, "");
    ExperimentConfig cfg;
    try {
        cfg = from_ojson(base);
    } catch (const ordered_json::exception& e) {
        throw ConfigError(std::string("config value error: ") + e.what());
    }
    validate_config(cfg);
    return cfg;
}

ExperimentConfig load_config(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw ConfigError("cannot open config file '" + path + "'");
    std::ostringstream ss;
    ss << f.rdbuf();
    return parse_config_text(ss.str());
}

std::string config_to_json(const ExperimentConfig& cfg) {
    return to_ojson(cfg).dump(2) + "\n";
}

} // namespace dmplug
