#include "cwss/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <sstream>

#include "cwss/png_io.hpp"
#include "cwss/rng.hpp"
#include "cwss/taxonomy.hpp"

namespace fs = std::filesystem;

namespace cwss {

void SynthConfig::validate() const {
  if (num_classes < 1 || num_classes > LabelTaxonomy::kNumClasses)
    throw ValueError("num_classes must lie in [1,27]");
  if (patches < 1) throw ValueError("patches must be >= 1");
  if (min_labels < 1 || max_labels < min_labels || max_labels > num_classes)
    throw ValueError("label count range invalid");
  if (!(border_fraction >= 0.0f && border_fraction < 1.0f))
    throw ValueError("border_fraction must lie in [0,1)");
  if (size < 16) throw ValueError("patch size too small");
}

TextureRecipe texture_recipe(int cls) {
  // Golden-angle hue rotation keeps base colors far apart for any count.
  float hue = std::fmod(0.05f + 0.381966f * static_cast<float>(cls), 1.0f);
  float h6 = hue * 6.0f;
  int sector = static_cast<int>(h6) % 6;
  float f = h6 - std::floor(h6);
  float p = 0.20f, v = 0.85f;
  float q = v - (v - p) * f;
  float t = p + (v - p) * f;
  float r = v, g = t, b = p;
  switch (sector) {
    case 0: r = v; g = t; b = p; break;
    case 1: r = q; g = v; b = p; break;
    case 2: r = p; g = v; b = t; break;
    case 3: r = p; g = q; b = v; break;
    case 4: r = t; g = p; b = v; break;
    default: r = v; g = p; b = q; break;
  }
  TextureRecipe rec;
  rec.r = r;
  rec.g = g;
  rec.b = b;
  rec.pattern = cls % 4;
  rec.frequency = 10.0f + 4.0f * static_cast<float>(cls % 7);
  return rec;
}

namespace {

float pattern_value(const TextureRecipe& rec, int y, int x, int size) {
  float fy = static_cast<float>(y) / static_cast<float>(size);
  float fx = static_cast<float>(x) / static_cast<float>(size);
  float w = 2.0f * 3.14159265f * rec.frequency;
  switch (rec.pattern) {
    case 0: return std::sin(w * fy);
    case 1: return std::sin(w * fx);
    case 2: return std::sin(w * fy) * std::sin(w * fx);
    default: return std::sin(w * (fx + fy) * 0.70710678f);
  }
}

}  // namespace

std::vector<PatchRecord> generate_synthetic(const SynthConfig& cfg) {
  cfg.validate();
  const int S = cfg.size;
  // border margin m solving (S-2m)^2 = (1-fraction) S^2
  int margin = static_cast<int>(std::lround(
      0.5 * (S - S * std::sqrt(1.0 - static_cast<double>(cfg.border_fraction)))));
  margin = std::clamp(margin, 0, S / 4);

  std::vector<PatchRecord> out;
  out.reserve(static_cast<size_t>(cfg.patches));
  for (int pi = 0; pi < cfg.patches; ++pi) {
    Rng rng = Rng::fork(cfg.seed, cfg.salt * 1000003ULL + static_cast<std::uint64_t>(pi));
    int k = rng.uniform_int(cfg.min_labels, cfg.max_labels);

    std::vector<int> ids(static_cast<size_t>(cfg.num_classes));
    std::iota(ids.begin(), ids.end(), 0);
    for (int i = 0; i < k; ++i) {
      int j = rng.uniform_int(i, cfg.num_classes - 1);
      std::swap(ids[static_cast<size_t>(i)], ids[static_cast<size_t>(j)]);
    }
    ids.resize(static_cast<size_t>(k));

    std::vector<std::pair<float, float>> seeds(static_cast<size_t>(k));
    for (auto& s : seeds) {
      s.first = static_cast<float>(rng.uniform(margin, S - margin));
      s.second = static_cast<float>(rng.uniform(margin, S - margin));
    }
    std::vector<float> region_gain(static_cast<size_t>(k));
    for (float& g : region_gain) g = static_cast<float>(rng.uniform(0.9, 1.1));

    PatchRecord rec;
    char name[64];
    std::snprintf(name, sizeof(name), "%s_%05d", cfg.prefix.c_str(), pi);
    rec.name = name;
    rec.image = Tensor({3, S, S});
    rec.mask = Tensor({S, S});
    rec.labels = Tensor({LabelTaxonomy::kNumClasses});

    for (int y = 0; y < S; ++y)
      for (int x = 0; x < S; ++x) {
        bool border = y < margin || x < margin || y >= S - margin || x >= S - margin;
        if (border) {
          for (int c = 0; c < 3; ++c) rec.image.at(c, y, x) = 1.0f;
          rec.mask->at(y, x) = static_cast<float>(LabelTaxonomy::kBackground);
          continue;
        }
        int best = 0;
        float best_d = 1e30f;
        for (int r = 0; r < k; ++r) {
          float dy = static_cast<float>(y) - seeds[static_cast<size_t>(r)].first;
          float dx = static_cast<float>(x) - seeds[static_cast<size_t>(r)].second;
          float dist = dy * dy + dx * dx;
          if (dist < best_d) {
            best_d = dist;
            best = r;
          }
        }
        int cls = ids[static_cast<size_t>(best)];
        TextureRecipe tex = texture_recipe(cls);
        float mod = 0.22f * pattern_value(tex, y, x, S);
        float gain = region_gain[static_cast<size_t>(best)];
        float noise = static_cast<float>(rng.uniform(-0.02, 0.02));
        rec.image.at(0, y, x) = std::clamp(tex.r * gain + mod + noise, 0.0f, 1.0f);
        rec.image.at(1, y, x) = std::clamp(tex.g * gain + mod + noise, 0.0f, 1.0f);
        rec.image.at(2, y, x) = std::clamp(tex.b * gain + mod + noise, 0.0f, 1.0f);
        rec.mask->at(y, x) = static_cast<float>(cls);
      }

    // Labels come from the painted mask, not the intended class list.
    for (float m : rec.mask->data) {
      int cls = static_cast<int>(m);
      if (cls < LabelTaxonomy::kNumClasses) rec.labels.data[static_cast<size_t>(cls)] = 1.0f;
    }
    out.push_back(std::move(rec));
  }
  return out;
}

void save_dataset(const std::vector<PatchRecord>& records, const std::string& dir) {
  fs::create_directories(fs::path(dir) / "images");
  bool any_mask = false;
  for (const auto& r : records) any_mask = any_mask || r.mask.has_value();
  if (any_mask) fs::create_directories(fs::path(dir) / "masks");

  std::ofstream csv(fs::path(dir) / "labels.csv");
  if (!csv) throw IoError("cannot write labels.csv under " + dir);
  csv << "filename";
  for (const auto& c : LabelTaxonomy::instance().classes()) csv << "," << c.code;
  csv << "\n";
  for (const auto& r : records) {
    write_png_rgb((fs::path(dir) / "images" / (r.name + ".png")).string(), r.image);
    if (r.mask)
      write_png_gray_raw((fs::path(dir) / "masks" / (r.name + ".png")).string(), *r.mask);
    csv << r.name << ".png";
    for (int j = 0; j < LabelTaxonomy::kNumClasses; ++j)
      csv << "," << (r.labels.data[static_cast<size_t>(j)] > 0.5f ? 1 : 0);
    csv << "\n";
  }
  if (!csv.good()) throw IoError("failed writing labels.csv under " + dir);
}

std::vector<PatchRecord> load_dataset(const std::string& images_dir,
                                      const std::string& labels_csv,
                                      const std::string& masks_dir) {
  std::ifstream csv(labels_csv);
  if (!csv) throw IoError("cannot open labels CSV: " + labels_csv);

  const auto& tax = LabelTaxonomy::instance();
  std::string line;
  if (!std::getline(csv, line)) throw DataError("labels CSV is empty: " + labels_csv);

  auto split = [](const std::string& s) {
    std::vector<std::string> cells;
    std::stringstream ss(s);
    std::string cell;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    if (!s.empty() && s.back() == ',') cells.push_back("");
    return cells;
  };

  auto header = split(line);
  if (header.size() != 1 + LabelTaxonomy::kNumClasses || header[0] != "filename")
    throw DataError("labels CSV header must be 'filename' plus 27 class codes");
  for (int j = 0; j < LabelTaxonomy::kNumClasses; ++j)
    if (header[static_cast<size_t>(j + 1)] != tax.cls(j).code)
      throw DataError("labels CSV column " + std::to_string(j + 1) + " is '" +
                      header[static_cast<size_t>(j + 1)] + "', expected '" + tax.cls(j).code +
                      "'");

  std::vector<PatchRecord> out;
  int row = 1;
  while (std::getline(csv, line)) {
    ++row;
    if (line.empty()) continue;
    auto cells = split(line);
    if (cells.size() != 1 + LabelTaxonomy::kNumClasses)
      throw DataError("labels CSV row " + std::to_string(row) + " has " +
                      std::to_string(cells.size()) + " cells, expected 28");
    PatchRecord rec;
    fs::path img = fs::path(images_dir) / cells[0];
    if (!fs::exists(img))
      throw DataError("labels CSV row " + std::to_string(row) + ": missing image file " +
                      img.string());
    rec.image = read_png_rgb(img.string());
    rec.name = fs::path(cells[0]).stem().string();
    rec.labels = Tensor({LabelTaxonomy::kNumClasses});
    for (int j = 0; j < LabelTaxonomy::kNumClasses; ++j) {
      const std::string& cell = cells[static_cast<size_t>(j + 1)];
      if (cell != "0" && cell != "1")
        throw DataError("labels CSV row " + std::to_string(row) + ": non-binary flag '" +
                        cell + "' in column " + tax.cls(j).code);
      rec.labels.data[static_cast<size_t>(j)] = cell == "1" ? 1.0f : 0.0f;
    }
    if (!masks_dir.empty()) {
      fs::path mask = fs::path(masks_dir) / (rec.name + ".png");
      if (fs::exists(mask)) rec.mask = read_png_gray_raw(mask.string());
    }
    out.push_back(std::move(rec));
  }
  return out;
}

}  // namespace cwss
