#include "dcolor/dcolor.h"

#include "dcolor/commands.hpp"
#include "dcolor/config.hpp"
#include "dcolor/correlation.hpp"
#include "dcolor/error.hpp"

#include <cstdlib>
#include <cstring>
#include <exception>
#include <string>
#include <vector>

struct dcolor_config {
    dcolor::ExperimentConfig cfg;
};

namespace {

thread_local std::string lastError;

template <class F>
dcolor_status guarded(F&& f) {
    lastError.clear();
    try {
        f();
        return DCOLOR_OK;
    } catch (const dcolor::ConfigError& e) {
        lastError = e.what();
        return DCOLOR_CONFIG_ERROR;
    } catch (const dcolor::PrerequisiteError& e) {
        lastError = e.what();
        return DCOLOR_PREREQUISITE_MISSING;
    } catch (const dcolor::NumericalError& e) {
        lastError = e.what();
        return DCOLOR_NUMERICAL_FAILURE;
    } catch (const std::invalid_argument& e) {
        lastError = e.what();
        return DCOLOR_INVALID_ARGUMENT;
    } catch (const std::exception& e) {
        lastError = e.what();
        return DCOLOR_ERROR;
    } catch (...) {
        lastError = "unknown error";
        return DCOLOR_ERROR;
    }
}

char* copyString(const std::string& s) {
    char* out = static_cast<char*>(std::malloc(s.size() + 1));
    if (!out) throw std::bad_alloc();
    std::memcpy(out, s.c_str(), s.size() + 1);
    return out;
}

void emit(char** out, const std::string& s) {
    if (out) *out = copyString(s);
}

std::vector<std::string> toStrings(const char* const* items, size_t count) {
    if (count > 0 && !items) throw std::invalid_argument("null string array with non-zero count");
    std::vector<std::string> v;
    for (size_t i = 0; i < count; ++i) {
        if (!items[i]) throw std::invalid_argument("null entry in string array");
        v.emplace_back(items[i]);
    }
    return v;
}

void requireHandle(const void* p, const char* what) {
    if (!p) throw std::invalid_argument(std::string(what) + " is null");
}

} // namespace

extern "C" {

const char* dcolor_version(void) { return "1.0.0"; }

const char* dcolor_last_error(void) { return lastError.c_str(); }

const char* dcolor_status_name(dcolor_status status) {
    switch (status) {
    case DCOLOR_OK: return "ok";
    case DCOLOR_ERROR: return "error";
    case DCOLOR_CONFIG_ERROR: return "config_error";
    case DCOLOR_PREREQUISITE_MISSING: return "prerequisite_missing";
    case DCOLOR_NUMERICAL_FAILURE: return "numerical_failure";
    case DCOLOR_INVALID_ARGUMENT: return "invalid_argument";
    }
    return "unknown";
}

dcolor_status dcolor_config_load(const char* path, const char* const* overrides, size_t override_count,
                                 dcolor_config** out) {
    return guarded([&] {
        requireHandle(path, "path");
        requireHandle(out, "out");
        *out = nullptr;
        auto cfg = dcolor::parseConfig(path, toStrings(overrides, override_count));
        *out = new dcolor_config{std::move(cfg)};
    });
}

dcolor_status dcolor_config_default(const char* const* overrides, size_t override_count, dcolor_config** out) {
    return guarded([&] {
        requireHandle(out, "out");
        *out = nullptr;
        auto cfg = dcolor::configFromJson("{}", toStrings(overrides, override_count), "defaults");
        *out = new dcolor_config{std::move(cfg)};
    });
}

void dcolor_config_free(dcolor_config* config) { delete config; }

dcolor_status dcolor_config_set(dcolor_config* config, const char* assignment) {
    return guarded([&] {
        requireHandle(config, "config");
        requireHandle(assignment, "assignment");
        config->cfg = dcolor::configFromJson(dcolor::configToJson(config->cfg), {assignment}, "config");
    });
}

dcolor_status dcolor_config_to_json(const dcolor_config* config, char** out_json) {
    return guarded([&] {
        requireHandle(config, "config");
        requireHandle(out_json, "out_json");
        *out_json = copyString(dcolor::configToJson(config->cfg));
    });
}

void dcolor_string_free(char* s) { std::free(s); }

dcolor_status dcolor_compute_target(const dcolor_config* config, char** summary) {
    return guarded([&] {
        requireHandle(config, "config");
        emit(summary, dcolor::commandComputeTarget(config->cfg));
    });
}

dcolor_status dcolor_pretrain(const dcolor_config* config, int resume, char** summary) {
    return guarded([&] {
        requireHandle(config, "config");
        emit(summary, dcolor::commandPretrain(config->cfg, resume != 0));
    });
}

dcolor_status dcolor_eval(const dcolor_config* config, double* accuracy, char** summary) {
    return guarded([&] {
        requireHandle(config, "config");
        dcolor::EvalResult r;
        const std::string s = dcolor::commandEval(config->cfg, &r);
        if (accuracy) *accuracy = r.accuracy;
        emit(summary, s);
    });
}

dcolor_status dcolor_diagnose(const dcolor_config* config, int svg, char** summary) {
    return guarded([&] {
        requireHandle(config, "config");
        emit(summary, dcolor::commandDiagnose(config->cfg, svg != 0));
    });
}

dcolor_status dcolor_sweep(const dcolor_config* config, const char* axis, const char* const* values,
                           size_t value_count, char** summary) {
    return guarded([&] {
        requireHandle(config, "config");
        requireHandle(axis, "axis");
        emit(summary, dcolor::commandSweep(config->cfg, axis, toStrings(values, value_count)));
    });
}

dcolor_status dcolor_cross_correlation(const double* z1, const double* z2, size_t m, size_t d, double* out) {
    return guarded([&] {
        requireHandle(z1, "z1");
        requireHandle(z2, "z2");
        requireHandle(out, "out");
        if (m < 2 || d == 0) throw std::invalid_argument("cross correlation needs m >= 2 and d >= 1");
        dcolor::Tensor a({m, d}, std::vector<double>(z1, z1 + m * d));
        dcolor::Tensor b({m, d}, std::vector<double>(z2, z2 + m * d));
        const auto c = dcolor::correlateRaw(a, b);
        std::memcpy(out, c.values.data(), d * d * sizeof(double));
    });
}

} // extern "C"
