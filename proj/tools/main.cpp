// dyplan command line: index, run, datagen, analyze, report.

#include <CLI11.hpp>

#include "dyplan/analysis.hpp"
#include "dyplan/config.hpp"
#include "dyplan/datagen.hpp"
#include "dyplan/dataset.hpp"
#include "dyplan/error.hpp"
#include "dyplan/retrieval.hpp"
#include "dyplan/run.hpp"
#include "dyplan/templates.hpp"
#include "dyplan/text.hpp"

#include <atomic>
#include <csignal>
#include <fstream>
#include <iostream>
#include <optional>

namespace fs = std::filesystem;
using namespace dyplan;

namespace {

std::atomic<bool> g_interrupted{false};

extern "C" void on_sigint(int)
{
    g_interrupted.store(true);
}

void emit(const nlohmann::ordered_json& j, const std::string& out)
{
    const auto text = j.dump(2) + "\n";
    if (out.empty() || out == "-") {
        std::cout << text;
        return;
    }
    std::ofstream f(out, std::ios::binary | std::ios::trunc);
    if (!f || !(f << text)) {
        throw Error("cannot write " + out);
    }
}

std::vector<std::string> parse_order(const std::string& order)
{
    auto names = split(order, ',');
    if (names.empty()) {
        throw ConfigError("empty strategy order");
    }
    return names;
}

CorrectnessTable load_table(const std::string& path, const std::vector<std::string>& order)
{
    auto table = CorrectnessTable::load_jsonl(path, order);
    table.validate_complete();
    return table;
}

// {"id", "strategy"} lines, e.g. predictions of an external classifier.
std::map<std::string, std::string> load_choices(const fs::path& path)
{
    std::ifstream in(path);
    if (!in) {
        throw ConfigError("cannot open choices file: " + path.string());
    }
    std::map<std::string, std::string> out;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (trim(line).empty()) {
            continue;
        }
        try {
            const auto j = nlohmann::json::parse(line);
            if (!out.emplace(j.at("id").get<std::string>(), j.at("strategy").get<std::string>()).second) {
                throw ParseError(path.string() + ":" + std::to_string(line_no) + ": duplicate id");
            }
        } catch (const nlohmann::json::exception& e) {
            throw ParseError(path.string() + ":" + std::to_string(line_no) + ": " + e.what());
        }
    }
    return out;
}

std::vector<std::string> values(const std::map<std::string, std::string>& m)
{
    std::vector<std::string> out;
    for (const auto& [k, v] : m) {
        out.push_back(v);
    }
    return out;
}

KindWeights parse_kind_weights(const std::string& text)
{
    KindWeights weights;
    for (const auto& part : split(text, ',')) {
        const auto eq = part.find('=');
        if (eq == std::string::npos) {
            throw ConfigError("kind weight '" + part + "' is not kind=weight");
        }
        weights[instance_kind_from_string(trim(std::string_view(part).substr(0, eq)))] =
            std::stod(part.substr(eq + 1));
    }
    return weights;
}

struct RunFlags {
    std::string config;
    std::string backend;
    std::vector<std::string> overrides;
    std::map<std::string, std::string> direct;
};

}  // namespace

int main(int argc, char** argv)
{
    CLI::App app{"Dynamic strategy planning for question answering: evaluation, data generation and analysis"};
    app.set_version_flag("--version", std::string(library_version()));
    app.require_subcommand(1);

    // ---- index ----
    auto* index_cmd = app.add_subcommand("index", "Chunk a corpus and build a BM25 index");
    std::string corpus;
    std::string index_out;
    std::size_t window = kDefaultChunkWindow;
    Bm25Params params;
    index_cmd->add_option("--corpus", corpus, "Directory of text files or JSONL of {title, text}")->required();
    index_cmd->add_option("--out", index_out, "Index file to write")->required();
    index_cmd->add_option("--window", window, "Passage length in whitespace tokens")->capture_default_str();
    index_cmd->add_option("--k1", params.k1)->capture_default_str();
    index_cmd->add_option("--b", params.b)->capture_default_str();

    // ---- run ----
    auto* run_cmd = app.add_subcommand("run", "Answer a dataset with fixed strategies or a DyPlan pipeline");
    RunFlags rf;
    run_cmd->add_option("--config", rf.config, "key = value run configuration");
    run_cmd->add_option("--backend,--backend-config", rf.backend, "key = value backend configuration");
    run_cmd->add_option("--set", rf.overrides, "Override one key (key=value); repeatable");
    const std::vector<std::pair<std::string, std::string>> run_keys{
        {"dataset", "Dataset file"},
        {"format", "canonical or hotpotqa"},
        {"strategies", "Comma-separated strategy order"},
        {"mode", "fixed, dyplan-base or dyplan-verify"},
        {"rounds", "Maximum DyPlan-verify rounds"},
        {"index", "BM25 index file"},
        {"templates", "Prompt template directory"},
        {"shots", "Few-shot exemplar directory"},
        {"decision_shots", "Decision exemplars (JSONL)"},
        {"top_k", "Passages per retrieval"},
        {"w_token", "Cost weight per generated token"},
        {"w_retrieval", "Cost weight per retrieval"},
        {"seed", "Run seed"},
        {"out", "Output directory"},
        {"parallelism", "Concurrent questions"},
    };
    for (const auto& [key, help] : run_keys) {
        std::string flag = "--" + key;
        std::replace(flag.begin() + 2, flag.end(), '_', '-');
        run_cmd->add_option_function<std::string>(flag, [&rf, key](const std::string& v) { rf.direct[key] = v; }, help);
    }
    run_cmd->add_flag_function("--zero-shot", [&rf](std::int64_t) { rf.direct["zero_shot"] = "true"; },
                               "Run every strategy without exemplars");

    // ---- datagen ----
    auto* datagen_cmd = app.add_subcommand("datagen", "Build fine-tuning data from an outcome log");
    datagen_cmd->require_subcommand(0, 1);
    std::string dg_table;
    std::string dg_order = "direct,plan,reason,retrieval";
    std::string dg_out;
    std::size_t dg_cap = kDefaultTrainingCap;
    std::uint64_t dg_seed = 0;
    std::string dg_kinds = "decision,execution,verification,multiround";
    std::size_t dg_pair_budget = std::numeric_limits<std::size_t>::max();
    bool dg_balance = false;
    std::string dg_templates;
    std::string dg_weights;
    datagen_cmd->add_option("--table", dg_table, "Outcome log of fixed runs");
    datagen_cmd->add_option("--order", dg_order, "Strategy preference order")->capture_default_str();
    datagen_cmd->add_option("--out", dg_out, "Training JSONL to write");
    datagen_cmd->add_option("--cap", dg_cap, "Total instance cap")->capture_default_str();
    datagen_cmd->add_option("--seed", dg_seed, "Shuffle and sampling seed")->capture_default_str();
    datagen_cmd->add_option("--kinds", dg_kinds, "Instance kinds to build")->capture_default_str();
    datagen_cmd->add_option("--pair-budget", dg_pair_budget, "Multi-round instances per strategy pair");
    datagen_cmd->add_flag("--balance", dg_balance, "Balance verification yes/no labels");
    datagen_cmd->add_option("--templates", dg_templates, "Prompt template directory");
    datagen_cmd->add_option("--kind-weights", dg_weights, "Capped mix, e.g. decision=1,execution=2");

    auto* mix_cmd = datagen_cmd->add_subcommand("mix", "Combine per-dataset training files in equal shares");
    std::vector<std::string> mix_inputs;
    std::size_t mix_total = kDefaultTrainingCap;
    std::string mix_out;
    std::uint64_t mix_seed = 0;
    mix_cmd->add_option("--in", mix_inputs, "name=path of a training JSONL; repeatable")->required();
    mix_cmd->add_option("--total", mix_total, "Instances in the combined file")->capture_default_str();
    mix_cmd->add_option("--out", mix_out, "Combined JSONL to write")->required();
    mix_cmd->add_option("--seed", mix_seed)->capture_default_str();

    // ---- analyze ----
    auto* analyze_cmd = app.add_subcommand("analyze", "Post-hoc analytics over outcome and trace logs");
    analyze_cmd->require_subcommand(1);
    std::string an_table;
    std::string an_order = "direct,plan,reason,retrieval";
    std::string an_out;
    std::string an_traces;
    std::string an_choices;
    std::string an_dataset;
    std::string an_format = "canonical";
    std::string an_csv;
    CostWeights an_weights;
    const auto add_table_opts = [&](CLI::App* cmd) {
        cmd->add_option("--table", an_table, "Outcome log of fixed runs")->required();
        cmd->add_option("--order", an_order, "Strategy preference order")->capture_default_str();
        cmd->add_option("--out", an_out, "Report file (stdout when omitted)");
    };
    auto* calib_cmd = analyze_cmd->add_subcommand("calibration", "Strategy usage against the optimal policy");
    add_table_opts(calib_cmd);
    auto* calib_src = calib_cmd->add_option("--traces", an_traces, "Trace log; round-1 decisions are scored");
    calib_cmd->add_option("--choices", an_choices, "JSONL of {id, strategy} predictions")->excludes(calib_src);
    auto* verif_cmd = analyze_cmd->add_subcommand("verification", "KL before/after verification, rejections");
    add_table_opts(verif_cmd);
    verif_cmd->add_option("--traces", an_traces, "DyPlan-verify trace log")->required();
    verif_cmd->add_option("--dataset", an_dataset, "Dataset with gold answers")->required();
    verif_cmd->add_option("--format", an_format)->capture_default_str();
    auto* ub_cmd = analyze_cmd->add_subcommand("upper-bound", "Score the optimal policy over recorded outcomes");
    add_table_opts(ub_cmd);
    auto* ens_cmd = analyze_cmd->add_subcommand("ensemble", "Majority vote over all strategies");
    add_table_opts(ens_cmd);
    auto* viol_cmd = analyze_cmd->add_subcommand("violations", "F1 mass per correct-strategy subset");
    add_table_opts(viol_cmd);
    viol_cmd->add_option("--csv", an_csv, "Subset CSV (mask, strategies, count, mass, violation)");
    for (auto* cmd : {ub_cmd, ens_cmd}) {
        cmd->add_option("--w-token", an_weights.w_token)->capture_default_str();
        cmd->add_option("--w-retrieval", an_weights.w_retrieval)->capture_default_str();
    }

    // ---- report ----
    auto* report_cmd = app.add_subcommand("report", "Regenerate a report from an outcome or trace log");
    std::string rp_log;
    std::string rp_out;
    std::optional<double> rp_w_token;
    std::optional<double> rp_w_retrieval;
    report_cmd->add_option("--log", rp_log, "outcomes.jsonl or traces.jsonl")->required();
    report_cmd->add_option("--out", rp_out, "Report file (stdout when omitted)");
    report_cmd->add_option("--w-token", rp_w_token, "Defaults to the run manifest, else 1");
    report_cmd->add_option("--w-retrieval", rp_w_retrieval, "Defaults to the run manifest, else 100");

    CLI11_PARSE(app, argc, argv);

    try {
        if (*index_cmd) {
            auto passages = chunk_corpus(load_corpus(corpus), window);
            const auto index = Bm25Index::build(std::move(passages), params);
            index.save(index_out);
            std::cerr << "indexed " << index.n_docs() << " passages into " << index_out << "\n";
            return 0;
        }

        if (*run_cmd) {
            RunConfig config;
            if (!rf.config.empty()) {
                config = load_run_config(rf.config);
            }
            if (!rf.backend.empty()) {
                config.backend = load_backend_config(rf.backend);
            }
            for (const auto& [k, v] : rf.direct) {
                config.set(k, v);
            }
            for (const auto& kv : rf.overrides) {
                const auto eq = kv.find('=');
                if (eq == std::string::npos) {
                    throw ConfigError("--set expects key=value, got '" + kv + "'");
                }
                config.set(trim(std::string_view(kv).substr(0, eq)), trim(std::string_view(kv).substr(eq + 1)));
            }
            std::signal(SIGINT, on_sigint);
            RunHooks hooks;
            hooks.cancel = &g_interrupted;
            const auto result = run_command(config, hooks);
            std::cerr << result.completed << "/" << result.questions << " questions, log " << result.log.string()
                      << "\n";
            if (!result.failures.empty()) {
                std::cerr << result.failures.size() << " failure(s):\n";
                for (const auto& f : result.failures) {
                    std::cerr << "  " << f << "\n";
                }
            }
            if (result.exit_code == 130) {
                std::cerr << "interrupted; partial logs written\n";
            }
            return result.exit_code;
        }

        if (*datagen_cmd) {
            if (*mix_cmd) {
                std::vector<std::pair<std::string, std::vector<TrainingInstance>>> sets;
                for (const auto& in : mix_inputs) {
                    const auto eq = in.find('=');
                    if (eq == std::string::npos) {
                        throw ConfigError("--in expects name=path, got '" + in + "'");
                    }
                    sets.emplace_back(in.substr(0, eq), load_training_jsonl(in.substr(eq + 1)));
                }
                auto mixed = mix_combined(sets, mix_total, mix_seed);
                const auto n = emit_training_jsonl(mix_out, std::move(mixed), mix_seed, mix_total);
                std::cerr << "wrote " << n << " instances to " << mix_out << "\n";
                return 0;
            }
            if (dg_table.empty() || dg_out.empty()) {
                throw ConfigError("datagen needs --table and --out");
            }
            const auto order = parse_order(dg_order);
            const auto table = load_table(dg_table, order);
            const auto templates = dg_templates.empty() ? TemplateSet::builtin() : TemplateSet::load(dg_templates);
            const DatagenContext ctx{templates, select_strategies(default_strategies(), order)};
            const auto policy = optimal_policy(table, order);
            std::vector<TrainingInstance> all;
            const auto append = [&all](std::vector<TrainingInstance> v) {
                std::move(v.begin(), v.end(), std::back_inserter(all));
            };
            for (const auto& k : split(dg_kinds, ',')) {
                switch (instance_kind_from_string(k)) {
                case InstanceKind::Decision:
                    append(build_decision_data(table, policy, ctx));
                    break;
                case InstanceKind::Execution:
                    append(build_execution_data(table, ctx));
                    break;
                case InstanceKind::Verification:
                    append(build_verification_data(table, ctx, dg_balance, dg_seed));
                    break;
                case InstanceKind::Multiround:
                    append(build_multiround_data(table, ctx, dg_pair_budget));
                    break;
                }
            }
            const auto weights = dg_weights.empty() ? KindWeights{} : parse_kind_weights(dg_weights);
            const auto n = emit_training_jsonl(dg_out, std::move(all), dg_seed, dg_cap, weights);
            std::cerr << "wrote " << n << " instances to " << dg_out << "\n";
            return 0;
        }

        if (*analyze_cmd) {
            const auto order = parse_order(an_order);
            const auto table = load_table(an_table, order);
            const auto policy = optimal_policy(table, order);
            nlohmann::ordered_json j;
            if (*calib_cmd) {
                std::map<std::string, std::string> choices;
                if (!an_traces.empty()) {
                    choices = first_round_choices(load_traces_jsonl(an_traces));
                } else if (!an_choices.empty()) {
                    choices = load_choices(an_choices);
                } else {
                    throw ConfigError("calibration needs --traces or --choices");
                }
                const auto usage = usage_distribution(values(choices), order);
                const auto optimal = policy_distribution(policy, order);
                j["questions"] = choices.size();
                j["usage"] = usage.to_json();
                j["optimal"] = optimal.to_json();
                j["kl"] = kl_divergence(usage, optimal);
                j["decision_accuracy"] = decision_accuracy(choices, policy);
            } else if (*verif_cmd) {
                std::map<std::string, GoldAnswerSet> golds;
                for (const auto& r : load_dataset(an_dataset, dataset_format_from_string(an_format))) {
                    golds.emplace(r.id, r.golds());
                }
                const auto s = verification_stats(load_traces_jsonl(an_traces), golds, policy, order);
                j["kl_pre"] = s.kl_pre;
                j["kl_post"] = s.kl_post;
                j["reject_pct"] = s.reject_pct;
                j["rejections"] = s.rejections;
                j["precision_no"] = s.precision_no ? nlohmann::ordered_json(*s.precision_no) : nlohmann::ordered_json();
            } else if (*ub_cmd) {
                j["upper_bound"] = report_to_json(upper_bound(table, policy), an_weights);
                j["policy"] = policy_distribution(policy, order).to_json();
                auto& fixed = j["fixed"] = nlohmann::ordered_json::object();
                for (const auto& s : order) {
                    std::vector<ScoredItem> items;
                    for (const auto& q : table.question_ids()) {
                        const auto& o = table.at(q, s);
                        items.push_back({static_cast<double>(o.em), o.f1, static_cast<double>(o.gen_tokens),
                                         static_cast<double>(o.retrievals)});
                    }
                    fixed[s] = report_to_json(aggregate_scored(items), an_weights);
                }
            } else if (*ens_cmd) {
                const auto e = majority_ensemble(table, order);
                j["report"] = report_to_json(e.report, an_weights);
                auto& answers = j["answers"] = nlohmann::ordered_json::object();
                for (const auto& q : table.question_ids()) {
                    answers[q] = {{"answer", e.answers.at(q)}, {"from", e.winner.at(q)}};
                }
            } else {
                const auto c = hierarchy_violations(table, order);
                j = c.to_json();
                if (!an_csv.empty()) {
                    std::ofstream f(an_csv, std::ios::binary | std::ios::trunc);
                    if (!f || !(f << c.csv())) {
                        throw Error("cannot write " + an_csv);
                    }
                }
            }
            emit(j, an_out);
            return 0;
        }

        if (*report_cmd) {
            CostWeights weights;
            const auto manifest = fs::path(rp_log).parent_path() / kManifestFile;
            if (fs::exists(manifest)) {
                std::ifstream in(manifest);
                const auto m = nlohmann::json::parse(in);
                weights.w_token = m.at("weights").at("w_token").get<double>();
                weights.w_retrieval = m.at("weights").at("w_retrieval").get<double>();
            }
            weights.w_token = rp_w_token.value_or(weights.w_token);
            weights.w_retrieval = rp_w_retrieval.value_or(weights.w_retrieval);
            const auto text = render_report(rp_log, weights);
            if (rp_out.empty()) {
                std::cout << text;
            } else {
                std::ofstream f(rp_out, std::ios::binary | std::ios::trunc);
                if (!f || !(f << text)) {
                    throw Error("cannot write " + rp_out);
                }
            }
            return 0;
        }
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
