#pragma once

#include <cstdint>
#include <filesystem>
#include <sstream>
#include <string>
#include <vector>

#include "diffmix/imageio.hpp"
#include "diffmix/metrics.hpp"

#include "json.hpp"

namespace diffmix {

struct SeedResult {
    std::uint64_t seed = 0;
    std::string status;  // "ok" | "extraction_failed"
    std::string failure; // reason when status != ok
    std::string image_file;
    std::vector<std::string> mask_files;
    int resample_rounds = 0;
    int content_steps = 0;
    int fusion_steps = 0;
    std::vector<std::pair<std::string, Rect>> boxes; // extracted concept boxes
    SampleMetrics metrics;
};

struct RunReport {
    std::string config_hash;
    std::string arm = "default";
    std::vector<std::uint64_t> seeds;
    std::vector<SeedResult> results; // sorted by seed
    MetricAggregate aggregate;

    int num_ok() const {
        int n = 0;
        for (const auto& r : results) n += r.status == "ok" ? 1 : 0;
        return n;
    }
};

inline nlohmann::json to_json(const SeedResult& r) {
    nlohmann::json j;
    j["seed"] = r.seed;
    j["status"] = r.status;
    if (!r.failure.empty()) j["failure"] = r.failure;
    if (!r.image_file.empty()) j["image"] = r.image_file;
    j["masks"] = r.mask_files;
    j["resample_rounds"] = r.resample_rounds;
    j["content_steps"] = r.content_steps;
    j["fusion_steps"] = r.fusion_steps;
    j["boxes"] = nlohmann::json::array();
    for (const auto& [tag, box] : r.boxes) {
        j["boxes"].push_back({{"tag", tag}, {"box", {box.row0, box.col0, box.row1, box.col1}}});
    }
    if (r.status == "ok") {
        j["covered"] = r.metrics.covered;
        j["objects"] = nlohmann::json::array();
        for (const auto& obj : r.metrics.objects) {
            nlohmann::json o{{"tag", obj.tag}, {"found", obj.found}};
            if (obj.found) {
                o["box"] = {obj.box.row0, obj.box.col0, obj.box.row1, obj.box.col1};
                o["custom_match"] = obj.custom_match;
                o["blending"] = obj.blending;
            }
            j["objects"].push_back(std::move(o));
        }
    }
    return j;
}

inline nlohmann::json to_json(const RunReport& report) {
    nlohmann::json j;
    j["config_hash"] = report.config_hash;
    j["arm"] = report.arm;
    j["seeds"] = report.seeds;
    j["results"] = nlohmann::json::array();
    for (const auto& r : report.results) j["results"].push_back(to_json(r));
    j["aggregate"] = {{"num_seeds", report.aggregate.num_samples},
                      {"num_ok", report.num_ok()},
                      {"coverage_rate", report.aggregate.coverage_rate()},
                      {"fidelity_score", report.aggregate.fidelity_score()},
                      {"blending_score", report.aggregate.blending_score()},
                      {"coverage_x_fidelity", report.aggregate.coverage_x_fidelity()}};
    return j;
}

inline std::string format_metric(double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.6f", v);
    return buf;
}

// Per-seed rows. Columns are stable: seed,status,covered,objects_found,
// fidelity,blending.
inline std::string per_seed_csv(const RunReport& report) {
    std::ostringstream out;
    out << "seed,status,covered,objects_found,fidelity,blending\n";
    for (const auto& r : report.results) {
        int found = 0, custom = 0;
        double blending = 0.0;
        for (const auto& obj : r.metrics.objects) {
            if (!obj.found) continue;
            ++found;
            custom += obj.custom_match ? 1 : 0;
            blending += obj.blending;
        }
        out << r.seed << ',' << r.status << ',' << (r.metrics.covered ? 1 : 0) << ',' << found
            << ',' << format_metric(found == 0 ? 0.0 : double(custom) / found) << ','
            << format_metric(found == 0 ? 0.0 : blending / found) << '\n';
    }
    return out.str();
}

// Aggregate row in the shape the metrics command promises.
inline std::string aggregate_csv(const MetricAggregate& agg) {
    std::ostringstream out;
    out << "coverage_rate,fidelity_score,blending_score\n";
    out << format_metric(agg.coverage_rate()) << ',' << format_metric(agg.fidelity_score())
        << ',' << format_metric(agg.blending_score()) << '\n';
    return out.str();
}

// ---------------------------------------------------------------------------
// Minimal JSON-schema checker covering the subset the shipped report schema
// uses: type, properties, required, additionalProperties, items, enum.
// Returns human-readable violations; empty means valid.
// ---------------------------------------------------------------------------

namespace schemadetail {

inline bool type_matches(const nlohmann::json& doc, const std::string& type) {
    if (type == "object") return doc.is_object();
    if (type == "array") return doc.is_array();
    if (type == "string") return doc.is_string();
    if (type == "integer") return doc.is_number_integer();
    if (type == "number") return doc.is_number();
    if (type == "boolean") return doc.is_boolean();
    if (type == "null") return doc.is_null();
    return false;
}

inline void check(const nlohmann::json& doc, const nlohmann::json& schema,
                  const std::string& path, std::vector<std::string>& errors) {
    if (schema.contains("type")) {
        const auto& t = schema["type"];
        bool ok = false;
        if (t.is_array()) {
            for (const auto& one : t) ok = ok || type_matches(doc, one.get<std::string>());
        } else {
            ok = type_matches(doc, t.get<std::string>());
        }
        if (!ok) {
            errors.push_back(path + ": expected type " + t.dump());
            return;
        }
    }
    if (schema.contains("enum")) {
        bool ok = false;
        for (const auto& v : schema["enum"]) ok = ok || v == doc;
        if (!ok) errors.push_back(path + ": value not in enum " + schema["enum"].dump());
    }
    if (doc.is_object()) {
        if (schema.contains("required")) {
            for (const auto& key : schema["required"]) {
                if (!doc.contains(key.get<std::string>())) {
                    errors.push_back(path + ": missing required '" + key.get<std::string>() +
                                     "'");
                }
            }
        }
        const auto& props =
            schema.contains("properties") ? schema["properties"] : nlohmann::json::object();
        for (const auto& [key, value] : doc.items()) {
            if (props.contains(key)) {
                check(value, props[key], path + "." + key, errors);
            } else if (schema.contains("additionalProperties") &&
                       schema["additionalProperties"].is_boolean() &&
                       !schema["additionalProperties"].get<bool>()) {
                errors.push_back(path + ": unexpected property '" + key + "'");
            }
        }
    }
    if (doc.is_array() && schema.contains("items")) {
        for (std::size_t i = 0; i < doc.size(); ++i) {
            check(doc[i], schema["items"], path + "[" + std::to_string(i) + "]", errors);
        }
    }
}

} // namespace schemadetail

inline std::vector<std::string> validate_schema(const nlohmann::json& doc,
                                                const nlohmann::json& schema) {
    std::vector<std::string> errors;
    schemadetail::check(doc, schema, "$", errors);
    return errors;
}

} // namespace diffmix
