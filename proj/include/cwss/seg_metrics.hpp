#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "cwss/taxonomy.hpp"
#include "cwss/wsss.hpp"

namespace cwss {

struct SegPair {
  SegMask pred;
  SegMask truth;
};

// |P_j ∩ G_j| / |P_j ∪ G_j|; nullopt when the class appears in neither mask.
std::optional<double> iou(const SegPair& pair, int cls);

struct ClassIou {
  long long intersection = 0;
  long long union_ = 0;
  std::optional<double> value() const {
    if (union_ == 0) return std::nullopt;
    return static_cast<double>(intersection) / static_cast<double>(union_);
  }
};

struct MiouResult {
  double miou = 0.0;
  int defined_classes = 0;
  std::map<int, ClassIou> per_class;
};

// Pixel counts are pooled across all pairs per class before the ratio;
// classes absent from every mask are excluded from the mean.
MiouResult miou(const std::vector<SegPair>& pairs, const std::vector<int>& class_set);

struct EvalSummary {
  std::optional<double> miou_morph;
  std::optional<double> miou_func;
  std::optional<double> accuracy;  // percent
};

// Fixed column order: class_code, mode, intersection, union, iou.
// Undefined rows carry an empty iou cell and are marked in the text table.
std::string report_csv(const MiouResult& result, Mode mode);
std::string report_text(const MiouResult& result, Mode mode);
std::string summary_json(const EvalSummary& summary);

// Parses report_csv output back into per-class counts (round-trip check).
std::map<std::string, ClassIou> parse_report_csv(const std::string& csv);

}  // namespace cwss
