#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"
#include "lab/config.hpp"
#include "lab/rng.hpp"

namespace lab {

/*
 * Random streams for one run. Stream ids are (experiment index << 32) | sub,
 * and the repetition index is the third seed word, so adding repetitions or
 * sub-streams never perturbs existing ones.
 */
struct experiment_context {
    resolved_config config;
    std::uint64_t seed = 0;
    std::uint64_t rep = 0;
    std::uint64_t index = 0;

    rng_t rng(std::uint64_t sub) const { return make_rng(seed, (index << 32) | sub, rep); }
    std::uint64_t sub_seed(std::uint64_t sub) const {
        rng_t r = rng(sub);
        return r();
    }
};

struct experiment_result {
    std::vector<std::pair<std::string, std::string>> files;  // relative name, contents
    nlohmann::json derived = nlohmann::json::object();        // settings and summaries for the manifest
};

struct experiment_def {
    std::string name;
    std::string summary;
    std::vector<param_spec> params;
    std::function<experiment_result(const experiment_context&)> run;
};

const std::vector<experiment_def>& experiments();
const experiment_def* find_experiment(const std::string& name);
std::uint64_t experiment_index(const std::string& name);

// Parameters for `def` from its section of the document (defaults when absent).
resolved_config resolve_config(const experiment_def& def, const config_document& doc);

// Every section must name an experiment and resolve cleanly. Returns the
// section names in file order.
std::vector<std::string> validate_config(const config_document& doc);

}  // namespace lab
