#include "cwss/seg_metrics.hpp"

#include <cstdio>
#include <sstream>

#include "json.hpp"

namespace cwss {

namespace {

void check_pair(const SegPair& pair) {
  if (pair.pred.height != pair.truth.height || pair.pred.width != pair.truth.width)
    throw ShapeError("segmentation pair has mismatched dimensions");
  if (pair.pred.cls.size() != pair.truth.cls.size())
    throw ShapeError("segmentation pair has mismatched buffers");
}

void accumulate(const SegPair& pair, int cls, ClassIou& out) {
  check_pair(pair);
  for (size_t i = 0; i < pair.pred.cls.size(); ++i) {
    bool p = pair.pred.cls[i] == cls;
    bool g = pair.truth.cls[i] == cls;
    out.intersection += p && g;
    out.union_ += p || g;
  }
}

std::string class_label(int cls) {
  const auto& tax = LabelTaxonomy::instance();
  if (cls == LabelTaxonomy::kBackground) return "Background";
  if (cls == LabelTaxonomy::kOther) return "Other";
  return tax.cls(cls).code;
}

}  // namespace

std::optional<double> iou(const SegPair& pair, int cls) {
  ClassIou c;
  accumulate(pair, cls, c);
  return c.value();
}

MiouResult miou(const std::vector<SegPair>& pairs, const std::vector<int>& class_set) {
  if (pairs.empty()) throw ValueError("miou requires at least one segmentation pair");
  MiouResult res;
  double total = 0.0;
  for (int cls : class_set) {
    ClassIou c;
    for (const SegPair& pair : pairs) accumulate(pair, cls, c);
    res.per_class.emplace(cls, c);
    if (auto v = c.value()) {
      total += *v;
      ++res.defined_classes;
    }
  }
  if (res.defined_classes == 0)
    throw ValueError("IoU undefined for every class in the set (all absent)");
  res.miou = total / static_cast<double>(res.defined_classes);
  return res;
}

std::string report_csv(const MiouResult& result, Mode mode) {
  std::ostringstream os;
  os << "class_code,mode,intersection,union,iou\n";
  for (const auto& [cls, counts] : result.per_class) {
    os << class_label(cls) << "," << mode_name(mode) << "," << counts.intersection << ","
       << counts.union_ << ",";
    if (auto v = counts.value()) {
      char buf[32];
      std::snprintf(buf, sizeof(buf), "%.4f", *v);
      os << buf;
    }
    os << "\n";
  }
  return os.str();
}

std::string report_text(const MiouResult& result, Mode mode) {
  std::ostringstream os;
  os << "per-class IoU (" << mode_name(mode) << ")\n";
  for (const auto& [cls, counts] : result.per_class) {
    char line[96];
    if (auto v = counts.value())
      std::snprintf(line, sizeof(line), "  %-10s %.4f", class_label(cls).c_str(), *v);
    else
      std::snprintf(line, sizeof(line), "  %-10s undefined (absent)",
                    class_label(cls).c_str());
    os << line << "\n";
  }
  char tail[64];
  std::snprintf(tail, sizeof(tail), "mIoU %.4f over %d classes", result.miou,
                result.defined_classes);
  os << tail << "\n";
  return os.str();
}

std::string summary_json(const EvalSummary& summary) {
  nlohmann::ordered_json j;
  auto put = [&j](const char* key, const std::optional<double>& v) {
    if (v) {
      char buf[32];
      std::snprintf(buf, sizeof(buf), "%.4f", *v);
      j[key] = std::stod(buf);
    } else {
      j[key] = nullptr;
    }
  };
  put("miou_morph", summary.miou_morph);
  put("miou_func", summary.miou_func);
  put("accuracy", summary.accuracy);
  return j.dump(2) + "\n";
}

std::map<std::string, ClassIou> parse_report_csv(const std::string& csv) {
  std::istringstream is(csv);
  std::string line;
  if (!std::getline(is, line) || line != "class_code,mode,intersection,union,iou")
    throw DataError("unexpected metrics CSV header");
  std::map<std::string, ClassIou> out;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string code, mode, inter, uni, iou_cell;
    std::getline(ss, code, ',');
    std::getline(ss, mode, ',');
    std::getline(ss, inter, ',');
    std::getline(ss, uni, ',');
    std::getline(ss, iou_cell, ',');
    ClassIou c;
    try {
      c.intersection = std::stoll(inter);
      c.union_ = std::stoll(uni);
    } catch (const std::exception&) {
      throw DataError("malformed metrics CSV row: " + line);
    }
    out.emplace(code, c);
  }
  return out;
}

}  // namespace cwss
