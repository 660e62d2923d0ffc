#pragma once

#include "dmqr/llm.hpp"

#include <filesystem>
#include <map>
#include <string>
#include <vector>

namespace dmqr::llm {

/// Named prompt templates. The engine ships compiled-in defaults mirroring
/// the files under templates/; a directory of <name>.txt files overrides
/// them entry by entry, so prompts stay editable data.
class TemplateRegistry {
public:
    static TemplateRegistry builtin();

    /// Builtin defaults overlaid with every *.txt file in `dir`.
    static TemplateRegistry load_dir(const std::filesystem::path& dir);

    const PromptTemplate& get(const std::string& name) const;
    bool has(const std::string& name) const;
    std::vector<std::string> names() const;

    void put(PromptTemplate tpl);

private:
    std::map<std::string, PromptTemplate> by_name_;
};

}  // namespace dmqr::llm
