// Experiment driver: one subcommand per protocol plus a parameter sweep.

#include <CLI11.hpp>
#include <json.hpp>

#include <fstream>
#include <iostream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "coordsketch/experiment.hpp"

using namespace coordsketch;
using nlohmann::json;

namespace {

// Config keys that may also be given as --flags (underscores become dashes).
const std::vector<std::string> kKeys = {
    "n", "s", "d", "k", "p", "eps", "delta", "radius", "t", "rows", "fn", "graph", "noise", "generator", "input",
    "edges", "manifest", "truth", "backend", "sample_const", "heavy_const", "sketch_const", "sign_const", "delta_budget"};

std::string flag_name(std::string key) {
    for (auto& c : key)
        if (c == '_') c = '-';
    return "--" + key;
}

json to_json(const TrialRow& r) {
    json j = {{"seed", r.seed},       {"trial", r.trial}, {"outcome", r.outcome},
              {"success", r.success}, {"rounds", r.rounds}, {"words", r.words}};
    if (r.index >= 0) j["index"] = r.index;
    auto put = [&](const char* key, double v) { j[key] = std::isnan(v) ? json(nullptr) : json(v); };
    put("estimate", r.estimate);
    put("truth", r.truth);
    put("rel_error", r.rel_error);
    if (!r.error.empty()) j["error"] = r.error;
    return j;
}

json to_json(const Summary& s) {
    return {{"trials", s.trials},           {"errors", s.errors},           {"successes", s.successes},
            {"success_frac", s.success_frac}, {"words_total", s.words_total}, {"words_mean", s.words_mean}};
}

json to_json(const ResultTable& t) {
    json rows = json::array();
    for (const auto& r : t.rows) rows.push_back(to_json(r));
    return {{"protocol", t.protocol}, {"rows", rows}, {"summary", to_json(t.summary())}};
}

void write_to(const std::string& path, const std::string& text) {
    if (path == "-") {
        std::cout << text;
        return;
    }
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write " + path);
    out << text;
}

void print_errors(const std::vector<std::string>& errors) {
    for (const auto& e : errors) std::cerr << "config error: " << e << '\n';
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"coordinator-model protocols and composable sketches: experiment driver"};
    app.require_subcommand(1);
    app.fallthrough();

    std::string seed, config_path, csv_path, json_path;
    std::size_t trials = 0, jobs = 0;
    app.add_option("--seed", seed, "seed or comma-separated seeds (decimal or 0x-hex)");
    app.add_option("--trials", trials, "trials per seed");
    app.add_option("--csv", csv_path, "write the result table as CSV ('-' for stdout)");
    app.add_option("--json", json_path, "write the result table as JSON ('-' for stdout)");
    app.add_option("--jobs", jobs, "concurrent trials");
    app.add_option("--config", config_path, "key=value config file; flags override it");

    std::map<std::string, std::string> flag_values;
    std::map<std::string, CLI::App*> subs;
    for (const char* name : {"sample", "fsum", "fk", "hoc", "embed", "regress", "lra", "congest", "sweep"}) {
        auto* sub = app.add_subcommand(name, std::string("run the ") + name + " experiment");
        for (const auto& key : kKeys) {
            if (key == "s")
                sub->add_option("--s,--servers", flag_values[key], "number of servers");
            else if (key == "generator")
                sub->add_option("--generator,--dist", flag_values[key], "random-uniform, random-gaussian, random or file");
            else
                sub->add_option(flag_name(key), flag_values[key]);
        }
        subs[name] = sub;
    }
    std::string sweep_param, sweep_values, sweep_protocol;
    subs["sweep"]->add_option("--param", sweep_param, "config key to vary")->required();
    subs["sweep"]->add_option("--values", sweep_values, "comma-separated values")->required();
    subs["sweep"]->add_option("--protocol", sweep_protocol, "protocol to run (else taken from the config)");

    CLI11_PARSE(app, argc, argv);

    try {
        std::string sub_name = app.get_subcommands().front()->get_name();
        ConfigMap raw;
        std::vector<std::string> errors;
        if (!config_path.empty()) {
            std::ifstream in(config_path);
            if (!in) {
                std::cerr << "cannot open config " << config_path << '\n';
                return 2;
            }
            std::stringstream ss;
            ss << in.rdbuf();
            raw = parse_config_text(ss.str(), &errors);
        }
        if (sub_name != "sweep")
            raw["protocol"] = sub_name;
        else if (!sweep_protocol.empty())
            raw["protocol"] = sweep_protocol;
        for (const auto& [key, value] : flag_values)
            if (!value.empty()) raw[key] = value;
        if (raw.count("generator") && raw["generator"] == "random") raw["generator"] = "random-uniform";
        if (!seed.empty()) raw["seeds"] = seed;
        if (trials > 0) raw["trials"] = std::to_string(trials);
        if (jobs > 0) raw["jobs"] = std::to_string(jobs);

        if (sub_name != "sweep") {
            ConfigResult cr = validate_config(raw);
            errors.insert(errors.end(), cr.errors.begin(), cr.errors.end());
            if (!errors.empty()) {
                print_errors(errors);
                return 2;
            }
            ResultTable table = run_experiment(*cr.config);
            if (!csv_path.empty()) {
                std::ostringstream os;
                table.write_csv(os);
                write_to(csv_path, os.str());
            }
            if (!json_path.empty()) write_to(json_path, to_json(table).dump(2) + "\n");
            Summary s = table.summary();
            if (csv_path != "-" && json_path != "-")
                std::cout << table.protocol << ": trials=" << s.trials << " success_frac=" << s.success_frac
                          << " errors=" << s.errors << " words_total=" << s.words_total << '\n';
            for (const auto& r : table.rows)
                if (!r.error.empty()) std::cerr << "seed " << r.seed << " trial " << r.trial << ": " << r.error << '\n';
            return s.errors == 0 ? 0 : 1;
        }

        std::vector<std::string> values;
        {
            std::istringstream ss(sweep_values);
            std::string v;
            while (std::getline(ss, v, ',')) values.push_back(v);
        }
        SweepResult sweep = run_sweep(raw, sweep_param, values);
        errors.insert(errors.end(), sweep.errors.begin(), sweep.errors.end());
        if (!errors.empty()) {
            print_errors(errors);
            return 2;
        }
        std::ostringstream csv;
        sweep.table->write_csv(csv);
        json points = json::array();
        std::size_t total_errors = 0;
        for (const auto& point : sweep.table->points) {
            total_errors += point.summary.errors;
            json p = to_json(point.summary);
            p["param"] = sweep_param;
            p["value"] = point.value;
            points.push_back(p);
        }
        if (!csv_path.empty()) write_to(csv_path, csv.str());
        if (!json_path.empty()) write_to(json_path, json{{"sweep", points}}.dump(2) + "\n");
        if (csv_path.empty() && json_path.empty()) std::cout << csv.str();
        return total_errors == 0 ? 0 : 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
}
