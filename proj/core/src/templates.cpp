#include "dyplan/templates.hpp"

#include "dyplan/error.hpp"

#include <fstream>
#include <sstream>

namespace dyplan {

namespace fs = std::filesystem;

std::string render_template(std::string_view tmpl, const std::map<std::string, std::string>& vars)
{
    std::string out;
    out.reserve(tmpl.size());
    std::size_t i = 0;
    while (i < tmpl.size()) {
        if (tmpl[i] == '{') {
            const auto close = tmpl.find('}', i + 1);
            if (close != std::string_view::npos) {
                const auto it = vars.find(std::string(tmpl.substr(i + 1, close - i - 1)));
                if (it != vars.end()) {
                    out += it->second;
                    i = close + 1;
                    continue;
                }
            }
        }
        out += tmpl[i++];
    }
    return out;
}

const std::map<std::string, std::string>& TemplateSet::builtin_files()
{
    static const std::map<std::string, std::string> files{
        {"pipeline.system.txt",
         "You answer questions by first choosing an answering strategy, then executing it. "
         "You may be asked to check whether your answer is correct.\n"},
        {"decision.txt",
         "Question: {question}\n"
         "\n"
         "Choose the most suitable and efficient strategy to answer the question. Available strategies:\n"
         "{strategies}\n"
         "{shots}"
         "Respond with the strategy name only.\n"},
        {"decision.followup.txt",
         "The answer was judged incorrect. Choose a different strategy from:\n"
         "{strategies}\n"
         "Respond with the strategy name only.\n"},
        {"verification.txt", "Is the final answer above correct? Respond with yes or no only.\n"},

        {"direct.fixed.txt",
         "[system]\n"
         "Answer the question directly without any explanation. "
         "Respond in the form: Final answer: \"<answer>\"\n"
         "[user]\n"
         "Question: {question}\n"},
        {"plan.fixed.txt",
         "[system]\n"
         "Answer the question by decomposing it into simpler follow-up questions. Write each as "
         "\"Follow up: <question>\" followed by \"Intermediate answer: <answer>\". "
         "Finish with: Final answer: \"<answer>\"\n"
         "[user]\n"
         "Question: {question}\n"},
        {"reason.fixed.txt",
         "[system]\n"
         "Answer the question by reasoning step-by-step. "
         "Finish with: Final answer: \"<answer>\"\n"
         "[user]\n"
         "Question: {question}\n"},
        {"retrieval.fixed.txt",
         "[system]\n"
         "Answer the question using the retrieved passages. Reason step-by-step over them. "
         "Finish with: Final answer: \"<answer>\"\n"
         "[user]\n"
         "{passages}\n"
         "\n"
         "Question: {question}\n"},

        {"direct.execution.txt",
         "Strategy: direct. Give only the final answer in the form: Final answer: \"<answer>\"\n"},
        {"plan.execution.txt",
         "Strategy: plan. Decompose the question into follow-up questions with intermediate answers, "
         "then finish with: Final answer: \"<answer>\"\n"},
        {"reason.execution.txt",
         "Strategy: reason. Reason step-by-step, then finish with: Final answer: \"<answer>\"\n"},
        {"retrieval.execution.txt",
         "Strategy: retrieval. Retrieved passages:\n"
         "{passages}\n"
         "\n"
         "Reason step-by-step over the passages, then finish with: Final answer: \"<answer>\"\n"},
    };
    return files;
}

namespace {

std::string chomp(std::string text)
{
    while (!text.empty() && (text.back() == '\n' || text.back() == '\r')) {
        text.pop_back();
    }
    return text;
}

PromptTemplate parse_sectioned(const std::string& name, const std::string& content)
{
    static constexpr std::string_view kSystem = "[system]\n";
    static constexpr std::string_view kUser = "\n[user]\n";
    const auto sys = content.find(kSystem);
    const auto usr = content.find(kUser);
    if (sys != 0 || usr == std::string::npos) {
        throw ConfigError("template " + name + " must contain a [system] section followed by a [user] section");
    }
    return {content.substr(kSystem.size(), usr - kSystem.size()), chomp(content.substr(usr + kUser.size()))};
}

}  // namespace

TemplateSet TemplateSet::from_files(const std::map<std::string, std::string>& files)
{
    TemplateSet set;
    const auto required = [&](const std::string& name) -> std::string {
        const auto it = files.find(name);
        if (it == files.end()) {
            throw ConfigError("missing template " + name);
        }
        return chomp(it->second);
    };
    set.pipeline_system_ = required("pipeline.system.txt");
    set.decision_ = required("decision.txt");
    set.decision_followup_ = required("decision.followup.txt");
    set.verification_ = required("verification.txt");
    for (const auto& [name, content] : files) {
        static constexpr std::string_view kFixed = ".fixed.txt";
        static constexpr std::string_view kExec = ".execution.txt";
        if (name.ends_with(kFixed)) {
            set.fixed_[name.substr(0, name.size() - kFixed.size())] = parse_sectioned(name, content);
        } else if (name.ends_with(kExec)) {
            set.execution_[name.substr(0, name.size() - kExec.size())] = chomp(content);
        }
    }
    return set;
}

TemplateSet TemplateSet::builtin()
{
    return from_files(builtin_files());
}

TemplateSet TemplateSet::load(const fs::path& dir)
{
    if (!fs::is_directory(dir)) {
        throw ConfigError("template directory not found: " + dir.string());
    }
    auto files = builtin_files();
    for (const auto& entry : fs::directory_iterator(dir)) {
        if (!entry.is_regular_file() || entry.path().extension() != ".txt") {
            continue;
        }
        std::ifstream in(entry.path(), std::ios::binary);
        std::ostringstream content;
        content << in.rdbuf();
        files[entry.path().filename().string()] = content.str();
    }
    return from_files(files);
}

const PromptTemplate& TemplateSet::fixed(const std::string& strategy) const
{
    const auto it = fixed_.find(strategy);
    if (it == fixed_.end()) {
        throw ConfigError("no fixed-strategy template for '" + strategy + "'");
    }
    return it->second;
}

const std::string& TemplateSet::execution(const std::string& strategy) const
{
    const auto it = execution_.find(strategy);
    if (it == execution_.end()) {
        throw ConfigError("no execution template for '" + strategy + "'");
    }
    return it->second;
}

}  // namespace dyplan
