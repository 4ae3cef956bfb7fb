#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <string_view>
#include <vector>

namespace dyplan {

// Replaces each {name} whose name is a key of `vars`; other braces are kept.
std::string render_template(std::string_view tmpl, const std::map<std::string, std::string>& vars);

struct PromptTemplate {
    std::string system;
    std::string user;
};

// Prompt wording for every (strategy, component) pair. A template directory holds
//   <strategy>.fixed.txt       "[system]" and "[user]" sections
//   <strategy>.execution.txt   user turn of the Execution component
//   decision.txt               first-round Decision turn
//   decision.followup.txt      Decision turn after a rejected answer
//   verification.txt           Verification turn
//   pipeline.system.txt        system message of pipeline transcripts
// Placeholders: {question} {passages} {shots} {strategies} {strategy}.
class TemplateSet {
public:
    static TemplateSet builtin();
    // Built-in templates overridden by whichever files exist in `dir`.
    static TemplateSet load(const std::filesystem::path& dir);

    // File name -> content of the built-in set.
    static const std::map<std::string, std::string>& builtin_files();

    const PromptTemplate& fixed(const std::string& strategy) const;
    const std::string& execution(const std::string& strategy) const;
    const std::string& decision() const { return decision_; }
    const std::string& decision_followup() const { return decision_followup_; }
    const std::string& verification() const { return verification_; }
    const std::string& pipeline_system() const { return pipeline_system_; }

private:
    static TemplateSet from_files(const std::map<std::string, std::string>& files);

    std::map<std::string, PromptTemplate> fixed_;
    std::map<std::string, std::string> execution_;
    std::string decision_;
    std::string decision_followup_;
    std::string verification_;
    std::string pipeline_system_;
};

}  // namespace dyplan
