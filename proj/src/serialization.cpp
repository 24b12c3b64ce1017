#include "twinbeam/serialization.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"

#include "twinbeam/errors.hpp"

namespace twinbeam {

namespace {

using nlohmann::json;

constexpr const char* kKindJointPnd = "joint_pnd";
constexpr const char* kKindCoincidence = "coincidence_distribution";
constexpr const char* kKindEmResult = "em_result";
constexpr const char* kKindIntensityGrid = "intensity_grid";

json parse_document(const std::string& text) {
    try {
        return json::parse(text);
    } catch (const json::parse_error& e) {
        throw io_error(std::string("malformed JSON artifact: ") + e.what());
    }
}

json unwrap(const std::string& text, const char* expected_kind) {
    const json doc = parse_document(text);
    if (!doc.is_object() || !doc.contains("kind") || !doc["kind"].is_string())
        throw validation_error("artifact envelope lacks a string 'kind' field");
    const std::string kind = doc["kind"].get<std::string>();
    if (!doc.contains("version") || !doc["version"].is_number_integer())
        throw validation_error("artifact envelope lacks an integer 'version' field");
    if (doc["version"].get<long long>() != kEnvelopeVersion) {
        std::ostringstream msg;
        msg << "unsupported artifact version " << doc["version"]
            << " (this build reads version " << kEnvelopeVersion << ")";
        throw validation_error(msg.str());
    }
    if (kind != expected_kind)
        throw validation_error("expected artifact kind '" + std::string(expected_kind) +
                               "', found '" + kind + "'");
    if (!doc.contains("payload") || !doc["payload"].is_object())
        throw validation_error("artifact envelope lacks an object 'payload' field");
    return doc["payload"];
}

std::string wrap(const char* kind, json payload) {
    const json doc{{"kind", kind},
                   {"version", kEnvelopeVersion},
                   {"payload", std::move(payload)}};
    return doc.dump(2) + "\n";
}

const json& require_field(const json& payload, const char* field) {
    if (!payload.contains(field))
        throw validation_error(std::string("payload lacks required field '") + field + "'");
    return payload[field];
}

std::size_t read_count(const json& payload, const char* field) {
    const json& j = require_field(payload, field);
    if (!j.is_number_integer() || j.get<long long>() < 0)
        throw validation_error(std::string("field '") + field +
                               "' must be a nonnegative integer");
    return static_cast<std::size_t>(j.get<long long>());
}

double read_finite(const json& payload, const char* field) {
    const json& j = require_field(payload, field);
    if (!j.is_number() || !std::isfinite(j.get<double>()))
        throw validation_error(std::string("field '") + field +
                               "' must be a finite number");
    return j.get<double>();
}

std::vector<double> read_array(const json& payload, const char* field,
                               std::size_t expected_size) {
    const json& j = require_field(payload, field);
    if (!j.is_array())
        throw validation_error(std::string("field '") + field + "' must be an array");
    if (j.size() != expected_size) {
        std::ostringstream msg;
        msg << "field '" << field << "' has " << j.size() << " entries, expected "
            << expected_size;
        throw validation_error(msg.str());
    }
    std::vector<double> out;
    out.reserve(j.size());
    for (const json& v : j) {
        if (!v.is_number() || !std::isfinite(v.get<double>()))
            throw validation_error(std::string("field '") + field +
                                   "' holds a non-finite entry");
        out.push_back(v.get<double>());
    }
    return out;
}

json joint_payload(const JointPnd& p) {
    return json{{"n_max_s", p.n_max_s()},
                {"n_max_i", p.n_max_i()},
                {"tail_mass", p.tail_mass()},
                {"probs", p.probs()}};
}

JointPnd joint_from_payload(const json& payload) {
    const std::size_t n_max_s = read_count(payload, "n_max_s");
    const std::size_t n_max_i = read_count(payload, "n_max_i");
    const double tail = read_finite(payload, "tail_mass");
    std::vector<double> probs =
        read_array(payload, "probs", (n_max_s + 1) * (n_max_i + 1));
    return JointPnd(std::move(probs), n_max_s, n_max_i, tail);
}

const char* origin_name(CoincidenceDistribution::Origin origin) {
    switch (origin) {
    case CoincidenceDistribution::Origin::analytic: return "analytic";
    case CoincidenceDistribution::Origin::monte_carlo: return "monte_carlo";
    case CoincidenceDistribution::Origin::file: return "file";
    }
    throw validation_error("unknown coincidence origin");
}

CoincidenceDistribution::Origin origin_from_name(const std::string& name) {
    if (name == "analytic") return CoincidenceDistribution::Origin::analytic;
    if (name == "monte_carlo") return CoincidenceDistribution::Origin::monte_carlo;
    if (name == "file") return CoincidenceDistribution::Origin::file;
    throw validation_error("unknown coincidence origin '" + name +
                           "' (expected analytic, monte_carlo or file)");
}

std::string format_double(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

} // namespace

std::string to_json(const JointPnd& p) {
    return wrap(kKindJointPnd, joint_payload(p));
}

std::string to_json(const CoincidenceDistribution& f) {
    json payload{{"c_max_s", f.c_max_s},
                 {"c_max_i", f.c_max_i},
                 {"origin", origin_name(f.origin)},
                 {"freqs", f.freqs}};
    payload["shots"] = f.shots ? json(*f.shots) : json(nullptr);
    return wrap(kKindCoincidence, std::move(payload));
}

std::string to_json(const EmResult& r) {
    const json payload{{"rho", joint_payload(r.rho)},
                       {"kl_trace", r.kl_trace},
                       {"iterations", r.iterations_run},
                       {"converged", r.converged}};
    return wrap(kKindEmResult, payload);
}

std::string to_json(const IntensityGrid& g) {
    const json payload{{"s", g.s},
                       {"w_s_axis", g.w_s_axis},
                       {"w_i_axis", g.w_i_axis},
                       {"values", g.values},
                       {"cancellation_warnings", g.cancellation_warnings}};
    return wrap(kKindIntensityGrid, payload);
}

std::string envelope_kind(const std::string& text) {
    const json doc = parse_document(text);
    if (!doc.is_object() || !doc.contains("kind") || !doc["kind"].is_string())
        throw validation_error("artifact envelope lacks a string 'kind' field");
    return doc["kind"].get<std::string>();
}

JointPnd joint_pnd_from_json(const std::string& text) {
    return joint_from_payload(unwrap(text, kKindJointPnd));
}

CoincidenceDistribution coincidence_from_json(const std::string& text) {
    const json payload = unwrap(text, kKindCoincidence);
    CoincidenceDistribution f;
    f.c_max_s = read_count(payload, "c_max_s");
    f.c_max_i = read_count(payload, "c_max_i");
    f.origin = origin_from_name(require_field(payload, "origin").get<std::string>());
    f.freqs = read_array(payload, "freqs", f.rows() * f.cols());

    const json& shots = require_field(payload, "shots");
    if (shots.is_null()) {
        f.shots.reset();
    } else if (shots.is_number_integer() && shots.get<long long>() > 0) {
        f.shots = static_cast<std::uint64_t>(shots.get<long long>());
    } else {
        throw validation_error("field 'shots' must be null or a positive integer");
    }

    double total = 0.0;
    for (const double v : f.freqs) {
        if (v < 0.0)
            throw validation_error("histogram entries must be nonnegative");
        total += v;
    }
    if (f.origin == CoincidenceDistribution::Origin::monte_carlo && !f.shots)
        throw validation_error("monte_carlo histograms must declare their shot count");
    if (f.shots) {
        if (total > static_cast<double>(*f.shots) * (1.0 + 1e-9))
            throw validation_error("histogram counts exceed the declared shot total");
    } else if (total > 1.0 + 1e-6) {
        throw validation_error(
            "histogram mass exceeds 1 and no shot count is given to normalize by");
    }
    return f;
}

EmResult em_result_from_json(const std::string& text) {
    const json payload = unwrap(text, kKindEmResult);
    const json& rho_field = require_field(payload, "rho");
    if (!rho_field.is_object())
        throw validation_error("field 'rho' must be a joint distribution object");

    EmResult r{joint_from_payload(rho_field), {}, 0, false};
    const json& trace = require_field(payload, "kl_trace");
    if (!trace.is_array())
        throw validation_error("field 'kl_trace' must be an array");
    r.kl_trace = read_array(payload, "kl_trace", trace.size());
    for (std::size_t k = 0; k < r.kl_trace.size(); ++k) {
        if (r.kl_trace[k] < 0.0)
            throw validation_error("kl_trace entries must be nonnegative");
        if (k > 0 && r.kl_trace[k] > r.kl_trace[k - 1] + 1e-12)
            throw validation_error("kl_trace must be non-increasing");
    }
    r.iterations_run = read_count(payload, "iterations");
    if (r.iterations_run != r.kl_trace.size())
        throw validation_error("'iterations' must match the kl_trace length");
    const json& conv = require_field(payload, "converged");
    if (!conv.is_boolean())
        throw validation_error("field 'converged' must be a boolean");
    r.converged = conv.get<bool>();
    return r;
}

IntensityGrid intensity_grid_from_json(const std::string& text) {
    const json payload = unwrap(text, kKindIntensityGrid);
    IntensityGrid g;
    g.s = read_finite(payload, "s");
    OrderingParam validate_s(g.s); // range check, value reused as-is
    (void)validate_s;

    const json& ws = require_field(payload, "w_s_axis");
    const json& wi = require_field(payload, "w_i_axis");
    if (!ws.is_array() || !wi.is_array())
        throw validation_error("grid axes must be arrays");
    g.w_s_axis = read_array(payload, "w_s_axis", ws.size());
    g.w_i_axis = read_array(payload, "w_i_axis", wi.size());
    for (const std::vector<double>* axis : {&g.w_s_axis, &g.w_i_axis}) {
        if (axis->empty())
            throw validation_error("grid axes must be non-empty");
        if (axis->front() < 0.0)
            throw validation_error("grid axes must be nonnegative");
        for (std::size_t k = 1; k < axis->size(); ++k)
            if ((*axis)[k] <= (*axis)[k - 1])
                throw validation_error("grid axes must be strictly increasing");
    }
    g.values = read_array(payload, "values", g.w_s_axis.size() * g.w_i_axis.size());
    if (payload.contains("cancellation_warnings"))
        g.cancellation_warnings = read_count(payload, "cancellation_warnings");
    return g;
}

std::string to_csv(const IntensityGrid& g) {
    const std::size_t rows = g.w_s_axis.size();
    const std::size_t cols = g.w_i_axis.size();
    if (rows == 0 || cols == 0 || g.values.size() != rows * cols)
        throw validation_error("CSV export needs a populated grid");
    std::string out;
    out.reserve(g.values.size() * 12);
    for (std::size_t j = 0; j < cols; ++j) {
        out += ',';
        out += format_double(g.w_i_axis[j]);
    }
    out += '\n';
    for (std::size_t i = 0; i < rows; ++i) {
        out += format_double(g.w_s_axis[i]);
        for (std::size_t j = 0; j < cols; ++j) {
            out += ',';
            out += format_double(g.values[i * cols + j]);
        }
        out += '\n';
    }
    return out;
}

std::string read_text_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in)
        throw io_error("cannot open '" + path + "' for reading");
    std::ostringstream buf;
    buf << in.rdbuf();
    if (in.bad())
        throw io_error("read failure on '" + path + "'");
    return buf.str();
}

void write_text_file(const std::string& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out)
        throw io_error("cannot open '" + path + "' for writing");
    out << text;
    out.flush();
    if (!out)
        throw io_error("write failure on '" + path + "'");
}

} // namespace twinbeam
