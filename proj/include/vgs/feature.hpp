#pragma once

// Shared vocabulary types: feature sequences and the sample metadata that
// binds them to the experiment design.

#include <cstddef>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

namespace vgs {

enum class Modality { audio, image };
enum class Language { none, en, fr, nl };
enum class Split { unassigned, train, val, test };
enum class ClassStatus { familiar, novel };

inline const char* to_string(Modality m) { return m == Modality::audio ? "audio" : "image"; }
inline const char* to_string(Language l) {
  switch (l) {
    case Language::en: return "en";
    case Language::fr: return "fr";
    case Language::nl: return "nl";
    default: return "none";
  }
}
inline const char* to_string(Split s) {
  switch (s) {
    case Split::train: return "train";
    case Split::val: return "val";
    case Split::test: return "test";
    default: return "unassigned";
  }
}
inline const char* to_string(ClassStatus s) { return s == ClassStatus::familiar ? "familiar" : "novel"; }

inline Modality modality_from_string(const std::string& s) {
  if (s == "audio") return Modality::audio;
  if (s == "image") return Modality::image;
  throw std::invalid_argument("unknown modality: " + s);
}
inline Language language_from_string(const std::string& s) {
  if (s == "en" || s == "EN") return Language::en;
  if (s == "fr" || s == "FR") return Language::fr;
  if (s == "nl" || s == "NL") return Language::nl;
  if (s == "none" || s.empty()) return Language::none;
  throw std::invalid_argument("unknown language: " + s);
}
inline Split split_from_string(const std::string& s) {
  if (s == "train") return Split::train;
  if (s == "val") return Split::val;
  if (s == "test") return Split::test;
  if (s == "unassigned") return Split::unassigned;
  throw std::invalid_argument("unknown split: " + s);
}
inline ClassStatus class_status_from_string(const std::string& s) {
  if (s == "familiar") return ClassStatus::familiar;
  if (s == "novel") return ClassStatus::novel;
  throw std::invalid_argument("unknown class status: " + s);
}

// One encoded audio word or image: T frames of D features, row-major.
struct FeatureSequence {
  std::size_t frames = 0;
  std::size_t dim = 0;
  std::vector<float> data;

  float at(std::size_t t, std::size_t d) const { return data[t * dim + d]; }
};

struct ClassSpec {
  std::string name;
  ClassStatus status = ClassStatus::familiar;
  std::map<Language, std::string> word_forms;
};

struct SampleRecord {
  std::string id;
  std::string class_name;
  Modality modality = Modality::audio;
  Language language = Language::none;  // none for images
  std::string source;
  Split split = Split::unassigned;
  std::size_t feature_index = 0;
};

}  // namespace vgs
