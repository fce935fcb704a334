#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

namespace cwss {

enum class Mode { Morphological, Functional };

Mode parse_mode(const std::string& text);  // "morph" | "func"
std::string mode_name(Mode mode);

struct ClassInfo {
  int id;
  std::string code;
  Mode mode;
  std::array<std::uint8_t, 3> color;
};

// The 27-label universe: 23 morphological + 4 functional tissue types,
// plus the two synthetic segmentation classes Background and Other.
class LabelTaxonomy {
 public:
  static const LabelTaxonomy& instance();

  static constexpr int kNumClasses = 27;
  static constexpr int kBackground = 27;
  static constexpr int kOther = 28;

  const std::vector<ClassInfo>& classes() const { return classes_; }
  const ClassInfo& cls(int id) const;
  int index_of(const std::string& code) const;  // throws DataError on unknown code
  std::vector<int> mode_classes(Mode mode) const;

  // Classes designated by the background/other synthesis rules.
  int white_adipose() const { return white_adipose_; }            // A.W
  std::vector<int> adipose() const { return adipose_; }           // A.*
  std::vector<int> transparent_functional() const { return transparent_; }  // G.O, G.N, T

  std::array<std::uint8_t, 3> color_of(int id) const;  // accepts synthetic ids too

 private:
  LabelTaxonomy();
  std::vector<ClassInfo> classes_;
  int white_adipose_;
  std::vector<int> adipose_;
  std::vector<int> transparent_;
};

}  // namespace cwss
