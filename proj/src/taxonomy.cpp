#include "cwss/taxonomy.hpp"

#include "cwss/tensor.hpp"

namespace cwss {

Mode parse_mode(const std::string& text) {
  if (text == "morph" || text == "morphological") return Mode::Morphological;
  if (text == "func" || text == "functional") return Mode::Functional;
  throw ValueError("unknown mode '" + text + "' (expected morph|func)");
}

std::string mode_name(Mode mode) {
  return mode == Mode::Morphological ? "morph" : "func";
}

LabelTaxonomy::LabelTaxonomy() {
  const Mode M = Mode::Morphological;
  const Mode F = Mode::Functional;
  classes_ = {
      {0, "E.M.S", M, {170, 50, 60}},    {1, "E.M.U", M, {60, 80, 200}},
      {2, "E.M.O", M, {60, 170, 90}},    {3, "E.T.S", M, {220, 190, 60}},
      {4, "E.T.U", M, {150, 60, 190}},   {5, "E.T.O", M, {60, 190, 190}},
      {6, "E.P", M, {230, 120, 40}},     {7, "C.D.I", M, {120, 90, 40}},
      {8, "C.D.R", M, {180, 140, 100}},  {9, "C.L", M, {90, 130, 60}},
      {10, "H.E", M, {200, 40, 40}},     {11, "H.K", M, {240, 80, 120}},
      {12, "H.Y", M, {140, 30, 90}},     {13, "S.M", M, {40, 110, 160}},
      {14, "S.E", M, {100, 200, 240}},   {15, "S.C", M, {30, 60, 110}},
      {16, "S.R", M, {160, 200, 60}},    {17, "A.W", M, {250, 230, 200}},
      {18, "A.B", M, {190, 150, 60}},    {19, "A.M", M, {120, 110, 200}},
      {20, "M.M", M, {220, 60, 200}},    {21, "M.K", M, {90, 40, 160}},
      {22, "N.P", M, {40, 160, 130}},    {23, "G", F, {230, 150, 180}},
      {24, "G.O", F, {110, 220, 170}},   {25, "G.N", F, {250, 170, 90}},
      {26, "T", F, {80, 90, 240}},
  };
  white_adipose_ = 17;
  adipose_ = {17, 18, 19};
  transparent_ = {24, 25, 26};
}

const LabelTaxonomy& LabelTaxonomy::instance() {
  static LabelTaxonomy tax;
  return tax;
}

const ClassInfo& LabelTaxonomy::cls(int id) const {
  if (id < 0 || id >= kNumClasses)
    throw ValueError("class id " + std::to_string(id) + " out of range");
  return classes_[static_cast<size_t>(id)];
}

int LabelTaxonomy::index_of(const std::string& code) const {
  for (const auto& c : classes_)
    if (c.code == code) return c.id;
  throw DataError("unknown class code '" + code + "'");
}

std::vector<int> LabelTaxonomy::mode_classes(Mode mode) const {
  std::vector<int> out;
  for (const auto& c : classes_)
    if (c.mode == mode) out.push_back(c.id);
  return out;
}

std::array<std::uint8_t, 3> LabelTaxonomy::color_of(int id) const {
  if (id == kBackground) return {255, 255, 255};
  if (id == kOther) return {128, 128, 128};
  return cls(id).color;
}

}  // namespace cwss
