#include "mspa/config.hpp"

#include <fstream>
#include <functional>
#include <map>

namespace mspa {

using nlohmann::json;

json to_json(const TrainConfig& c) {
    return json{{"n_prototypes", c.n_prototypes},
                {"labeled_batch", c.labeled_batch},
                {"unlabeled_batch", c.unlabeled_batch},
                {"lr", c.lr},
                {"adam_beta1", c.adam_beta1},
                {"adam_beta2", c.adam_beta2},
                {"adam_eps", c.adam_eps},
                {"w_max", c.w_max},
                {"t_max", c.t_max},
                {"seed", c.seed},
                {"lpa", c.toggles.lpa},
                {"upa", c.toggles.upa},
                {"spa", c.toggles.spa},
                {"checkpoint_every", c.checkpoint_every},
                {"val_every", c.val_every},
                {"labeled_fraction", c.labeled_fraction},
                {"grad_clip", c.grad_clip},
                {"augment", c.augment},
                {"widths", c.descriptor.widths},
                {"feature_dim", c.descriptor.feature_dim}};
}

namespace {

template <typename T>
T typed(const json& v, const std::string& key) {
    try {
        if constexpr (std::is_same_v<T, bool>) {
            if (!v.is_boolean()) throw ConfigError("");
        } else if constexpr (std::is_integral_v<T>) {
            if (!v.is_number_integer()) throw ConfigError("");
            if constexpr (std::is_unsigned_v<T>) {
                if (v.is_number_integer() && !v.is_number_unsigned() && v.get<long long>() < 0) throw ConfigError("");
            }
        } else if constexpr (std::is_floating_point_v<T>) {
            if (!v.is_number()) throw ConfigError("");
        }
        return v.get<T>();
    } catch (const std::exception&) {
        throw ConfigError("config key '" + key + "': invalid value " + v.dump());
    }
}

}  // namespace

CliConfig parse_config(const json& doc, CliConfig base) {
    if (!doc.is_object()) throw ConfigError("config must be a JSON object");
    TrainConfig& c = base.train;
    const std::map<std::string, std::function<void(const json&, const std::string&)>> setters{
        {"n_prototypes", [&](const json& v, const std::string& k) { c.n_prototypes = typed<int>(v, k); }},
        {"labeled_batch", [&](const json& v, const std::string& k) { c.labeled_batch = typed<int>(v, k); }},
        {"unlabeled_batch", [&](const json& v, const std::string& k) { c.unlabeled_batch = typed<int>(v, k); }},
        {"lr", [&](const json& v, const std::string& k) { c.lr = typed<float>(v, k); }},
        {"adam_beta1", [&](const json& v, const std::string& k) { c.adam_beta1 = typed<float>(v, k); }},
        {"adam_beta2", [&](const json& v, const std::string& k) { c.adam_beta2 = typed<float>(v, k); }},
        {"adam_eps", [&](const json& v, const std::string& k) { c.adam_eps = typed<float>(v, k); }},
        {"w_max", [&](const json& v, const std::string& k) { c.w_max = typed<float>(v, k); }},
        {"t_max", [&](const json& v, const std::string& k) { c.t_max = typed<long>(v, k); }},
        {"seed", [&](const json& v, const std::string& k) { c.seed = typed<std::uint64_t>(v, k); }},
        {"lpa", [&](const json& v, const std::string& k) { c.toggles.lpa = typed<bool>(v, k); }},
        {"upa", [&](const json& v, const std::string& k) { c.toggles.upa = typed<bool>(v, k); }},
        {"spa", [&](const json& v, const std::string& k) { c.toggles.spa = typed<bool>(v, k); }},
        {"checkpoint_every", [&](const json& v, const std::string& k) { c.checkpoint_every = typed<long>(v, k); }},
        {"val_every", [&](const json& v, const std::string& k) { c.val_every = typed<long>(v, k); }},
        {"labeled_fraction", [&](const json& v, const std::string& k) { c.labeled_fraction = typed<double>(v, k); }},
        {"grad_clip", [&](const json& v, const std::string& k) { c.grad_clip = typed<float>(v, k); }},
        {"augment", [&](const json& v, const std::string& k) { c.augment = typed<bool>(v, k); }},
        {"widths",
         [&](const json& v, const std::string& k) {
             if (!v.is_array()) throw ConfigError("config key '" + k + "': expected an array of integers");
             std::vector<int> w;
             for (const auto& x : v) w.push_back(typed<int>(x, k));
             c.descriptor.widths = std::move(w);
         }},
        {"feature_dim", [&](const json& v, const std::string& k) { c.descriptor.feature_dim = typed<int>(v, k); }},
        {"data", [&](const json& v, const std::string& k) { base.data_dir = typed<std::string>(v, k); }},
        {"out", [&](const json& v, const std::string& k) { base.out_dir = typed<std::string>(v, k); }},
    };
    for (const auto& [key, value] : doc.items()) {
        const auto it = setters.find(key);
        if (it == setters.end()) throw ConfigError("unknown config key '" + key + "'");
        it->second(value, key);
    }
    // labeled_batch defaults to n_prototypes unless given explicitly.
    if (doc.contains("n_prototypes") && !doc.contains("labeled_batch")) c.labeled_batch = c.n_prototypes;
    try {
        c.validate();
    } catch (const std::invalid_argument& e) {
        throw ConfigError(e.what());
    }
    return base;
}

CliConfig load_config_file(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot read config file " + path.string());
    json doc;
    try {
        doc = json::parse(in);
    } catch (const json::parse_error& e) {
        throw ConfigError(path.string() + ": " + e.what());
    }
    return parse_config(doc);
}

}  // namespace mspa
