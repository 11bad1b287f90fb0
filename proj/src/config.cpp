#include "dcolor/config.hpp"

#include "dcolor/error.hpp"

#include <json.hpp>

#include <algorithm>
#include <fstream>
#include <sstream>

namespace dcolor {

using nlohmann::json;

namespace {

json syntheticJson(const SparseDenseSpec& s) {
    return {{"samples", s.samples},
            {"num_classes", s.numClasses},
            {"sparse_dim", s.sparseDim},
            {"dense_dim", s.denseDim},
            {"sparse_magnitude", s.sparseMagnitude},
            {"sparse_noise", s.sparseNoise},
            {"dense_noise", s.denseNoise}};
}

json headJson(const ProjectorSpec& p) { return {{"widths", p.widths}, {"batch_norm", p.batchNorm}}; }

json toJson(const ExperimentConfig& c) {
    json j;
    j["seed"] = c.seed;
    j["variant"] = lossVariantName(c.loss.variant);
    j["output_dir"] = c.outputDir;

    json ds = syntheticJson(c.dataset.synthetic);
    ds["kind"] = c.dataset.kind;
    ds["image_path"] = c.dataset.imagePath;
    ds["label_path"] = c.dataset.labelPath;
    j["dataset"] = ds;

    const auto& a = c.augment;
    j["augment"] = {{"dense_noise", a.denseNoise},     {"dense_dropout", a.denseDropout},
                    {"scale_min", a.scaleMin},         {"scale_max", a.scaleMax},
                    {"mirror_prob", a.mirrorProb},     {"crop_scale_min", a.cropScaleMin},
                    {"crop_scale_max", a.cropScaleMax}, {"aspect_min", a.aspectMin},
                    {"aspect_max", a.aspectMax},       {"brightness", a.brightness},
                    {"contrast", a.contrast}};

    j["encoder"] = {{"widths", c.encoder.widths},
                    {"batch_norm", c.encoder.batchNorm},
                    {"tap", c.encoder.tap},
                    {"allow_final_tap", c.encoder.allowFinalTap}};
    j["coloring_head"] = headJson(c.coloringHead);
    j["whitening_head"] = headJson(c.whiteningHead);
    j["share_heads"] = c.shareHeads;

    j["loss"] = {{"lambda", c.loss.lambda},
                 {"lambda_schedule", c.loss.useSchedule ? c.loss.schedule : std::vector<double>{}},
                 {"schedule_block", c.loss.scheduleBlock},
                 {"alpha", c.loss.alpha},
                 {"sigma", c.loss.sigma}};

    j["target"] = {{"source", targetSourceName(c.target.source)},
                   {"path", c.target.path},
                   {"vae_epochs", c.target.vaeEpochs},
                   {"vae_batch_size", c.target.vaeBatchSize},
                   {"vae_learning_rate", c.target.vaeLearningRate},
                   {"beta_kl", c.target.betaKL},
                   {"draws", c.target.draws}};

    j["optim"] = {{"learning_rate", c.optim.learningRate},
                  {"weight_decay", c.optim.weightDecay},
                  {"beta1", c.optim.beta1},
                  {"beta2", c.optim.beta2},
                  {"epsilon", c.optim.epsilon}};
    j["batch_size"] = c.batchSize;
    j["epochs"] = c.epochs;
    j["diagnostic_samples"] = c.diagnosticSamples;

    j["eval"] = {{"probe_epochs", c.eval.probeEpochs},
                 {"train_fraction", c.eval.trainFraction},
                 {"learning_rate", c.eval.learningRate},
                 {"final_learning_rate", c.eval.finalLearningRate},
                 {"batch_size", c.eval.batchSize},
                 {"transfer", c.eval.transfer ? syntheticJson(*c.eval.transfer) : json(nullptr)}};
    return j;
}

ExperimentConfig defaults() {
    ExperimentConfig c;
    c.augment.denseNoise = 1.0;
    c.augment.denseDropout = 0.3;
    c.augment.scaleMin = 0.8;
    c.augment.scaleMax = 1.2;
    c.augment.mirrorProb = 0.5;
    c.augment.cropScaleMin = 0.5;
    c.augment.cropScaleMax = 1.0;
    c.augment.aspectMin = 0.75;
    c.augment.aspectMax = 4.0 / 3.0;
    c.augment.brightness = 0.2;
    c.augment.contrast = 0.2;
    c.encoder.widths = {64, 64, 64, 32};
    c.encoder.tap = 2;
    c.coloringHead.widths = {64, 64, 64};
    c.whiteningHead.widths = {64, 64, 64};
    return c;
}

// --- reading ---------------------------------------------------------------

std::string typeName(const json& j) { return j.type_name(); }

const json& at(const json& j, const std::string& path) {
    const json* cur = &j;
    std::size_t start = 0;
    while (start <= path.size()) {
        const auto dot = path.find('.', start);
        const std::string key = path.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
        cur = &cur->at(key);
        if (dot == std::string::npos) break;
        start = dot + 1;
    }
    return *cur;
}

double getDouble(const json& j, const std::string& path) {
    const json& v = at(j, path);
    if (!v.is_number()) throw ConfigError("config key '" + path + "' must be a number, got " + typeName(v));
    return v.get<double>();
}

std::size_t getSize(const json& j, const std::string& path) {
    const json& v = at(j, path);
    if (v.is_number_unsigned()) return v.get<std::size_t>();
    if (v.is_number_integer()) {
        throw ConfigError("config key '" + path + "' must be a non-negative integer, got " + v.dump());
    }
    if (v.is_number_float() && v.get<double>() >= 0 && v.get<double>() == static_cast<double>(v.get<std::size_t>())) {
        return v.get<std::size_t>();
    }
    throw ConfigError("config key '" + path + "' must be a non-negative integer, got " + v.dump());
}

bool getBool(const json& j, const std::string& path) {
    const json& v = at(j, path);
    if (!v.is_boolean()) throw ConfigError("config key '" + path + "' must be true or false, got " + v.dump());
    return v.get<bool>();
}

std::string getString(const json& j, const std::string& path) {
    const json& v = at(j, path);
    if (!v.is_string()) throw ConfigError("config key '" + path + "' must be a string, got " + v.dump());
    return v.get<std::string>();
}

std::vector<std::size_t> getSizes(const json& j, const std::string& path) {
    const json& v = at(j, path);
    if (!v.is_array()) throw ConfigError("config key '" + path + "' must be an array of integers");
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < v.size(); ++i) {
        json wrap = {{"x", v[i]}};
        out.push_back(getSize(wrap, "x"));
    }
    return out;
}

std::vector<double> getDoubles(const json& j, const std::string& path) {
    const json& v = at(j, path);
    if (!v.is_array()) throw ConfigError("config key '" + path + "' must be an array of numbers");
    std::vector<double> out;
    for (const auto& x : v) {
        if (!x.is_number()) throw ConfigError("config key '" + path + "' must hold numbers only");
        out.push_back(x.get<double>());
    }
    return out;
}

SparseDenseSpec syntheticFrom(const json& j, const std::string& p) {
    SparseDenseSpec s;
    s.samples = getSize(j, p + "samples");
    s.numClasses = getSize(j, p + "num_classes");
    s.sparseDim = getSize(j, p + "sparse_dim");
    s.denseDim = getSize(j, p + "dense_dim");
    s.sparseMagnitude = getDouble(j, p + "sparse_magnitude");
    s.sparseNoise = getDouble(j, p + "sparse_noise");
    s.denseNoise = getDouble(j, p + "dense_noise");
    return s;
}

ProjectorSpec headFrom(const json& j, const std::string& p) {
    ProjectorSpec h;
    h.widths = getSizes(j, p + ".widths");
    h.batchNorm = getBool(j, p + ".batch_norm");
    return h;
}

ExperimentConfig fromJson(const json& j) {
    ExperimentConfig c;
    c.seed = getSize(j, "seed");
    const std::string variant = getString(j, "variant");
    if (variant == "cross") {
        c.loss.variant = LossVariant::Cross;
    } else if (variant == "auto") {
        c.loss.variant = LossVariant::Auto;
    } else {
        throw ConfigError("variant must be 'cross' or 'auto', got '" + variant + "'");
    }
    c.outputDir = getString(j, "output_dir");

    c.dataset.kind = getString(j, "dataset.kind");
    c.dataset.synthetic = syntheticFrom(j, "dataset.");
    c.dataset.imagePath = getString(j, "dataset.image_path");
    c.dataset.labelPath = getString(j, "dataset.label_path");

    auto& a = c.augment;
    a.denseNoise = getDouble(j, "augment.dense_noise");
    a.denseDropout = getDouble(j, "augment.dense_dropout");
    a.scaleMin = getDouble(j, "augment.scale_min");
    a.scaleMax = getDouble(j, "augment.scale_max");
    a.mirrorProb = getDouble(j, "augment.mirror_prob");
    a.cropScaleMin = getDouble(j, "augment.crop_scale_min");
    a.cropScaleMax = getDouble(j, "augment.crop_scale_max");
    a.aspectMin = getDouble(j, "augment.aspect_min");
    a.aspectMax = getDouble(j, "augment.aspect_max");
    a.brightness = getDouble(j, "augment.brightness");
    a.contrast = getDouble(j, "augment.contrast");

    c.encoder.widths = getSizes(j, "encoder.widths");
    c.encoder.batchNorm = getBool(j, "encoder.batch_norm");
    c.encoder.tap = getSize(j, "encoder.tap");
    c.encoder.allowFinalTap = getBool(j, "encoder.allow_final_tap");
    c.coloringHead = headFrom(j, "coloring_head");
    c.whiteningHead = headFrom(j, "whitening_head");
    c.shareHeads = getBool(j, "share_heads");

    c.loss.lambda = getDouble(j, "loss.lambda");
    c.loss.schedule = getDoubles(j, "loss.lambda_schedule");
    c.loss.useSchedule = !c.loss.schedule.empty();
    c.loss.scheduleBlock = getSize(j, "loss.schedule_block");
    c.loss.alpha = getDouble(j, "loss.alpha");
    c.loss.sigma = getDouble(j, "loss.sigma");

    c.target.source = parseTargetSource(getString(j, "target.source"));
    c.target.path = getString(j, "target.path");
    c.target.vaeEpochs = getSize(j, "target.vae_epochs");
    c.target.vaeBatchSize = getSize(j, "target.vae_batch_size");
    c.target.vaeLearningRate = getDouble(j, "target.vae_learning_rate");
    c.target.betaKL = getDouble(j, "target.beta_kl");
    c.target.draws = getSize(j, "target.draws");

    c.optim.learningRate = getDouble(j, "optim.learning_rate");
    c.optim.weightDecay = getDouble(j, "optim.weight_decay");
    c.optim.beta1 = getDouble(j, "optim.beta1");
    c.optim.beta2 = getDouble(j, "optim.beta2");
    c.optim.epsilon = getDouble(j, "optim.epsilon");
    c.batchSize = getSize(j, "batch_size");
    c.epochs = getSize(j, "epochs");
    c.diagnosticSamples = getSize(j, "diagnostic_samples");

    c.eval.probeEpochs = getSize(j, "eval.probe_epochs");
    c.eval.trainFraction = getDouble(j, "eval.train_fraction");
    c.eval.learningRate = getDouble(j, "eval.learning_rate");
    c.eval.finalLearningRate = getDouble(j, "eval.final_learning_rate");
    c.eval.batchSize = getSize(j, "eval.batch_size");
    if (!at(j, "eval.transfer").is_null()) c.eval.transfer = syntheticFrom(j, "eval.transfer.");
    return c;
}

// --- merging and overrides ---------------------------------------------------

void collectKeys(const json& j, const std::string& prefix, std::vector<std::string>& out) {
    for (const auto& [key, value] : j.items()) {
        const std::string path = prefix.empty() ? key : prefix + "." + key;
        if (value.is_object()) {
            collectKeys(value, path, out);
        } else {
            out.push_back(path);
        }
    }
}

std::vector<std::string> schemaKeys() {
    json schema = toJson(defaults());
    schema["eval"]["transfer"] = syntheticJson(SparseDenseSpec{});
    std::vector<std::string> keys;
    collectKeys(schema, "", keys);
    return keys;
}

[[noreturn]] void unknownKey(const std::string& path) {
    throw ConfigError("unknown config key '" + path + "'; nearest valid key is '" + nearestKey(path, schemaKeys()) +
                      "'");
}

// Overlays `user` onto `base`, rejecting keys the schema does not know.
void merge(json& base, const json& user, const std::string& prefix) {
    if (!user.is_object()) throw ConfigError("config section '" + prefix + "' must be an object");
    for (const auto& [key, value] : user.items()) {
        const std::string path = prefix.empty() ? key : prefix + "." + key;
        if (!base.contains(key)) unknownKey(path);
        json& slot = base[key];
        if (path == "eval.transfer") {
            if (value.is_null()) {
                slot = nullptr;
                continue;
            }
            if (slot.is_null()) slot = syntheticJson(SparseDenseSpec{});
        }
        if (slot.is_object()) {
            merge(slot, value, path);
        } else {
            slot = value;
        }
    }
}

std::string resolveKey(const std::string& key) {
    const auto keys = schemaKeys();
    if (std::find(keys.begin(), keys.end(), key) != keys.end()) return key;
    std::vector<std::string> matches;
    for (const auto& k : keys) {
        if (k.size() > key.size() && k.compare(k.size() - key.size(), key.size(), key) == 0 &&
            k[k.size() - key.size() - 1] == '.') {
            matches.push_back(k);
        }
    }
    if (matches.empty()) {
        // Suggest against every dotted tail so that a misspelled suffix finds its full key.
        std::vector<std::string> tails;
        std::vector<std::string> owners;
        for (const auto& k : keys) {
            for (std::size_t pos = 0; pos != std::string::npos; pos = k.find('.', pos + 1)) {
                tails.push_back(pos == 0 ? k : k.substr(pos + 1));
                owners.push_back(k);
            }
        }
        const std::string near = nearestKey(key, tails);
        const auto at = std::find(tails.begin(), tails.end(), near) - tails.begin();
        throw ConfigError("unknown override key '" + key + "'; nearest valid key is '" + owners[at] + "'");
    }
    const auto depth = [](const std::string& k) { return std::count(k.begin(), k.end(), '.'); };
    std::stable_sort(matches.begin(), matches.end(),
              [&](const std::string& a, const std::string& b) { return depth(a) < depth(b); });
    if (matches.size() == 1 || depth(matches[0]) < depth(matches[1])) return matches.front();
    std::string list;
    for (const auto& m : matches) list += (list.empty() ? "" : ", ") + m;
    throw ConfigError("override key '" + key + "' is ambiguous: " + list);
}

void applyOverride(json& cfg, const std::string& text) {
    const auto eq = text.find('=');
    if (eq == std::string::npos || eq == 0) throw ConfigError("override '" + text + "' is not of the form key=value");
    const std::string key = resolveKey(text.substr(0, eq));
    const std::string raw = text.substr(eq + 1);
    json value;
    try {
        value = json::parse(raw);
    } catch (const json::parse_error&) {
        value = raw;
    }
    json* cur = &cfg;
    std::size_t start = 0;
    for (;;) {
        const auto dot = key.find('.', start);
        const std::string part = key.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
        if (dot == std::string::npos) {
            (*cur)[part] = value;
            break;
        }
        json& next = (*cur)[part];
        if (next.is_null()) next = syntheticJson(SparseDenseSpec{});
        cur = &next;
        start = dot + 1;
    }
}

} // namespace

std::string nearestKey(const std::string& key, const std::vector<std::string>& candidates) {
    std::string best;
    std::size_t bestDist = static_cast<std::size_t>(-1);
    for (const auto& c : candidates) {
        std::vector<std::size_t> prev(c.size() + 1), cur(c.size() + 1);
        for (std::size_t j = 0; j <= c.size(); ++j) prev[j] = j;
        for (std::size_t i = 1; i <= key.size(); ++i) {
            cur[0] = i;
            for (std::size_t j = 1; j <= c.size(); ++j) {
                cur[j] = std::min({prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (key[i - 1] == c[j - 1] ? 0u : 1u)});
            }
            std::swap(prev, cur);
        }
        if (prev[c.size()] < bestDist) {
            bestDist = prev[c.size()];
            best = c;
        }
    }
    return best;
}

std::vector<std::string> configKeys() { return schemaKeys(); }

std::string configToJson(const ExperimentConfig& cfg, int indent) { return toJson(cfg).dump(indent); }

std::uint64_t configDigest(const ExperimentConfig& cfg) { return fnv1a64(toJson(cfg).dump()); }

ExperimentConfig configFromJson(const std::string& text, const std::vector<std::string>& overrides,
                                const std::string& source) {
    json user;
    try {
        user = json::parse(text);
    } catch (const json::parse_error& e) {
        throw ConfigError(source + ": malformed JSON: " + e.what());
    }
    if (user.is_object() && user.contains("manifest_version") && user.contains("config")) user = user["config"];
    json merged = toJson(defaults());
    merge(merged, user, "");
    for (const auto& o : overrides) applyOverride(merged, o);
    ExperimentConfig cfg;
    try {
        cfg = fromJson(merged);
    } catch (const json::exception& e) {
        throw ConfigError(source + ": " + e.what());
    }
    cfg.resolve();
    cfg.validate();
    return cfg;
}

ExperimentConfig parseConfig(const std::string& path, const std::vector<std::string>& overrides) {
    std::ifstream in(path);
    if (!in) throw PrerequisiteError("config file '" + path + "' not found");
    std::stringstream ss;
    ss << in.rdbuf();
    return configFromJson(ss.str(), overrides, path);
}

} // namespace dcolor
