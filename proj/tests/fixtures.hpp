#pragma once

#include <fstream>
#include <string>
#include <vector>

#include "json.hpp"

namespace fixtures {

inline constexpr const char* kListReverseTheorem = R"(theorem list_reverse: "rev (rev xs) = xs")";

inline constexpr const char* kRevRevIsar =
    "proof (induction xs)\n"
    "    case Nil\n"
    "    then show ?case by simp\n"
    "    next\n"
    "    case (Cons a xs)\n"
    "    then show ?case by simp\n"
    "    qed";

inline constexpr const char* kRevRevIsarOneLine =
    "proof (induction xs) case Nil then show ?case by simp next case (Cons a xs) then show ?case by simp qed";

inline constexpr const char* kRevRevApply = "apply (induction xs) apply auto done";

inline constexpr const char* kRevRevIsarRendered =
    "proof (induction xs)\n"
    "  case Nil\n"
    "  then show ?case by simp\n"
    "next\n"
    "  case (Cons a xs)\n"
    "  then show ?case by simp\n"
    "qed";

struct CorpusEntry {
  std::string theorem;
  std::string proof;
  std::string source_path;
};

inline std::string data_path(const std::string& name) { return std::string(HP_TEST_DATA_DIR) + "/" + name; }

inline std::vector<CorpusEntry> load_corpus() {
  std::vector<CorpusEntry> out;
  std::ifstream in(data_path("corpus.jsonl"));
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    auto j = nlohmann::json::parse(line);
    out.push_back({j.at("theorem"), j.at("proof"), j.at("source_path")});
  }
  return out;
}

}  // namespace fixtures
