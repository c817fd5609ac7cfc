#pragma once

// Ingestion of aspect-polarity corpora into a uniform manifest.
//
// Supported sources:
//   semeval14  <sentence id><text/><aspectTerms><aspectTerm term polarity from to/>
//   semeval16  <Review><sentences><sentence id><text/><Opinions><Opinion target
//              category polarity from to/>
//   sentihood  JSON array of {id, text, opinions: [{sentiment, aspect,
//              target_entity}]}
// Character offsets are counted in Unicode code points.

#include <algorithm>
#include <cstddef>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <unordered_set>
#include <vector>

#include <boost/property_tree/ptree.hpp>
#include <boost/property_tree/xml_parser.hpp>
#include <nlohmann/json.hpp>

#include "bertil/errors.hpp"

namespace bertil {

enum class Split { kTrain, kTest };

inline std::string to_string(Split s) { return s == Split::kTrain ? "train" : "test"; }

inline Split parse_split(std::string_view s) {
  if (s == "train") return Split::kTrain;
  if (s == "test") return Split::kTest;
  throw InputError("unknown split '" + std::string(s) + "' (expected train or test)");
}

enum class DatasetKind { kSemEval14, kSemEval16, kSentiHood };

inline std::string to_string(DatasetKind d) {
  switch (d) {
    case DatasetKind::kSemEval14: return "semeval14";
    case DatasetKind::kSemEval16: return "semeval16";
    case DatasetKind::kSentiHood: return "sentihood";
  }
  return "unknown";
}

inline DatasetKind parse_dataset_kind(std::string_view s) {
  if (s == "semeval14") return DatasetKind::kSemEval14;
  if (s == "semeval16") return DatasetKind::kSemEval16;
  if (s == "sentihood") return DatasetKind::kSentiHood;
  throw InputError("unknown dataset '" + std::string(s) + "'");
}

struct CharSpan {
  std::size_t start = 0;  // inclusive, code points
  std::size_t end = 0;    // exclusive, code points
  friend bool operator==(const CharSpan&, const CharSpan&) = default;
};

struct AspectExample {
  std::string example_id;
  std::string sentence;
  std::string aspect;
  std::optional<CharSpan> span;
  std::string label;
  Split split = Split::kTrain;

  friend bool operator==(const AspectExample&, const AspectExample&) = default;
};

struct ParseReport {
  std::vector<AspectExample> examples;
  std::size_t sentence_count = 0;
  std::size_t skipped = 0;
  std::vector<std::string> warnings;

  /// Example count per label, in first-seen order of the canonical labels.
  std::map<std::string, std::size_t> tallies() const {
    std::map<std::string, std::size_t> t;
    for (const auto& e : examples) ++t[e.label];
    return t;
  }
};

// ---------------------------------------------------------------------------
// UTF-8 helpers

/// Byte offset of code point `cp` in `s`, or nullopt past the end.
inline std::optional<std::size_t> utf8_byte_offset(std::string_view s, std::size_t cp) {
  std::size_t byte = 0;
  for (std::size_t n = 0; n < cp; ++n) {
    if (byte >= s.size()) return std::nullopt;
    const auto lead = static_cast<unsigned char>(s[byte]);
    byte += lead < 0x80 ? 1 : lead < 0xE0 ? 2 : lead < 0xF0 ? 3 : 4;
  }
  if (byte > s.size()) return std::nullopt;
  return byte;
}

inline std::size_t utf8_length(std::string_view s) {
  std::size_t n = 0;
  for (unsigned char c : s) n += (c & 0xC0) != 0x80 ? 1 : 0;
  return n;
}

/// Substring by code-point span, or nullopt when the span is out of range.
inline std::optional<std::string_view> utf8_substr(std::string_view s, CharSpan span) {
  if (span.end < span.start) return std::nullopt;
  const auto b = utf8_byte_offset(s, span.start);
  const auto e = utf8_byte_offset(s, span.end);
  if (!b || !e) return std::nullopt;
  return s.substr(*b, *e - *b);
}

/// Code-point span of the first occurrence of `needle`, if any.
inline std::optional<CharSpan> utf8_find(std::string_view haystack, std::string_view needle) {
  const auto pos = haystack.find(needle);
  if (pos == std::string_view::npos || needle.empty()) return std::nullopt;
  const std::size_t start = utf8_length(haystack.substr(0, pos));
  return CharSpan{start, start + utf8_length(needle)};
}

// ---------------------------------------------------------------------------
// Label handling

inline std::optional<std::string> normalize_polarity(std::string_view raw) {
  std::string s(raw);
  std::transform(s.begin(), s.end(), s.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  if (s == "positive" || s == "negative" || s == "neutral" || s == "conflict") return s;
  return std::nullopt;
}

enum class LabelScheme { k2Way, k3Way, k4Way };

inline std::vector<std::string> scheme_labels(LabelScheme s) {
  switch (s) {
    case LabelScheme::k2Way: return {"positive", "negative"};
    case LabelScheme::k3Way: return {"positive", "negative", "neutral"};
    case LabelScheme::k4Way: return {"positive", "negative", "neutral", "conflict"};
  }
  return {};
}

inline std::string to_string(LabelScheme s) {
  switch (s) {
    case LabelScheme::k2Way: return "2way";
    case LabelScheme::k3Way: return "3way";
    case LabelScheme::k4Way: return "4way";
  }
  return "unknown";
}

inline LabelScheme parse_scheme(std::string_view s) {
  if (s == "2way") return LabelScheme::k2Way;
  if (s == "3way") return LabelScheme::k3Way;
  if (s == "4way") return LabelScheme::k4Way;
  throw ConfigError("unknown label scheme '" + std::string(s) + "' (expected 2way, 3way or 4way)");
}

inline LabelScheme default_scheme(DatasetKind d) {
  return d == DatasetKind::kSentiHood ? LabelScheme::k2Way : LabelScheme::k3Way;
}

// ---------------------------------------------------------------------------
// Parsers

namespace detail {

namespace pt = boost::property_tree;

inline pt::ptree read_xml_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  pt::ptree tree;
  try {
    pt::read_xml(in, tree);
  } catch (const pt::xml_parser_error& e) {
    throw FormatError(path.string() + ":" + std::to_string(e.line()) + ": " + e.message());
  }
  return tree;
}

inline std::string attr(const pt::ptree& node, const std::string& name) {
  return node.get<std::string>("<xmlattr>." + name, "");
}

inline std::optional<std::size_t> attr_offset(const pt::ptree& node, const std::string& name) {
  const auto v = node.get_optional<std::string>("<xmlattr>." + name);
  if (!v || v->empty()) return std::nullopt;
  std::size_t pos = 0;
  try {
    const long long n = std::stoll(*v, &pos);
    if (pos != v->size() || n < 0) return std::nullopt;
    return static_cast<std::size_t>(n);
  } catch (const std::exception&) {
    return std::nullopt;
  }
}

inline std::string make_id(DatasetKind d, Split s, std::string_view sentence_id,
                           std::size_t ordinal) {
  return to_string(d) + "-" + to_string(s) + "-" + std::string(sentence_id) + "-" +
         std::to_string(ordinal);
}

/// Keeps the span only if it selects exactly `aspect`.
inline std::optional<CharSpan> checked_span(const std::string& sentence, const std::string& aspect,
                                            std::optional<std::size_t> from,
                                            std::optional<std::size_t> to,
                                            const std::string& id, ParseReport& report) {
  if (!from || !to) {
    report.warnings.push_back(id + ": missing or invalid offsets, span dropped");
    return std::nullopt;
  }
  const CharSpan span{*from, *to};
  const auto sub = utf8_substr(sentence, span);
  if (!sub || *sub != aspect) {
    report.warnings.push_back(id + ": offsets [" + std::to_string(*from) + "," +
                              std::to_string(*to) + ") do not select '" + aspect +
                              "', span dropped");
    return std::nullopt;
  }
  return span;
}

template <class F>
void for_each_child(const pt::ptree& parent, const std::string& name, F&& fn) {
  for (const auto& [key, child] : parent)
    if (key == name) fn(child);
}

}  // namespace detail

/// One example per aspectTerm. Offsets that do not select the term are
/// reported and the span dropped; the example is kept.
inline ParseReport parse_semeval14(const std::filesystem::path& xml_path, Split split) {
  const auto tree = detail::read_xml_file(xml_path);
  ParseReport report;
  const auto root = tree.get_child_optional("sentences");
  if (!root) throw FormatError(xml_path.string() + ": missing <sentences> root element");
  detail::for_each_child(*root, "sentence", [&](const auto& sentence) {
    ++report.sentence_count;
    const std::string sid = detail::attr(sentence, "id");
    const std::string text = sentence.template get<std::string>("text", "");
    const auto terms = sentence.get_child_optional("aspectTerms");
    if (!terms) return;
    std::size_t ordinal = 0;
    detail::for_each_child(*terms, "aspectTerm", [&](const auto& term) {
      const std::string id = detail::make_id(DatasetKind::kSemEval14, split, sid, ordinal++);
      AspectExample ex;
      ex.example_id = id;
      ex.sentence = text;
      ex.aspect = detail::attr(term, "term");
      ex.split = split;
      const auto label = normalize_polarity(detail::attr(term, "polarity"));
      if (!label || ex.aspect.empty()) {
        report.warnings.push_back(id + ": missing term or unknown polarity '" +
                                  detail::attr(term, "polarity") + "', skipped");
        ++report.skipped;
        return;
      }
      ex.label = *label;
      ex.span = detail::checked_span(text, ex.aspect, detail::attr_offset(term, "from"),
                                     detail::attr_offset(term, "to"), id, report);
      report.examples.push_back(std::move(ex));
    });
  });
  return report;
}

/// One example per Opinion. A "NULL" target becomes a span-less example
/// whose aspect is the category string.
inline ParseReport parse_semeval16(const std::filesystem::path& xml_path, Split split) {
  const auto tree = detail::read_xml_file(xml_path);
  ParseReport report;
  const auto root = tree.get_child_optional("Reviews");
  if (!root) throw FormatError(xml_path.string() + ": missing <Reviews> root element");
  detail::for_each_child(*root, "Review", [&](const auto& review) {
    const auto sentences = review.get_child_optional("sentences");
    if (!sentences) return;
    detail::for_each_child(*sentences, "sentence", [&](const auto& sentence) {
      ++report.sentence_count;
      const std::string sid = detail::attr(sentence, "id");
      const std::string text = sentence.template get<std::string>("text", "");
      const auto opinions = sentence.get_child_optional("Opinions");
      if (!opinions) return;
      std::size_t ordinal = 0;
      detail::for_each_child(*opinions, "Opinion", [&](const auto& op) {
        const std::string id = detail::make_id(DatasetKind::kSemEval16, split, sid, ordinal++);
        AspectExample ex;
        ex.example_id = id;
        ex.sentence = text;
        ex.split = split;
        const std::string target = detail::attr(op, "target");
        const std::string category = detail::attr(op, "category");
        const auto label = normalize_polarity(detail::attr(op, "polarity"));
        if (!label || (target.empty() && category.empty())) {
          report.warnings.push_back(id + ": missing target or unknown polarity '" +
                                    detail::attr(op, "polarity") + "', skipped");
          ++report.skipped;
          return;
        }
        ex.label = *label;
        if (target == "NULL" || target.empty()) {
          ex.aspect = category;
        } else {
          ex.aspect = target;
          ex.span = detail::checked_span(text, target, detail::attr_offset(op, "from"),
                                         detail::attr_offset(op, "to"), id, report);
        }
        report.examples.push_back(std::move(ex));
      });
    });
  });
  return report;
}

/// One example per opinion; the aspect string is the location token
/// (LOCATION1, LOCATION2) and the span its first occurrence in the text.
/// Opinions lacking a required field are skipped and counted.
inline ParseReport parse_sentihood(const std::filesystem::path& json_path, Split split) {
  std::ifstream in(json_path);
  if (!in) throw IoError("cannot open " + json_path.string());
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw FormatError(json_path.string() + ": byte " + std::to_string(e.byte) + ": " + e.what());
  }
  if (!doc.is_array()) throw FormatError(json_path.string() + ": expected a top-level array");
  ParseReport report;
  std::size_t index = 0;
  for (const auto& rec : doc) {
    const std::size_t rec_no = index++;
    if (!rec.is_object() || !rec.contains("text") || !rec["text"].is_string() ||
        !rec.contains("opinions") || !rec["opinions"].is_array()) {
      report.warnings.push_back("record " + std::to_string(rec_no) +
                                ": missing text or opinions, skipped");
      ++report.skipped;
      continue;
    }
    ++report.sentence_count;
    std::string sid = std::to_string(rec_no);
    if (rec.contains("id")) sid = rec["id"].is_string() ? rec["id"].get<std::string>()
                                                        : rec["id"].dump();
    const std::string text = rec["text"].get<std::string>();
    std::size_t ordinal = 0;
    for (const auto& op : rec["opinions"]) {
      const std::string id = detail::make_id(DatasetKind::kSentiHood, split, sid, ordinal++);
      const bool complete = op.is_object() && op.contains("sentiment") &&
                            op["sentiment"].is_string() && op.contains("target_entity") &&
                            op["target_entity"].is_string();
      const auto label = complete ? normalize_polarity(op["sentiment"].get<std::string>())
                                  : std::nullopt;
      if (!label) {
        report.warnings.push_back(id + ": missing or invalid sentiment/target_entity, skipped");
        ++report.skipped;
        continue;
      }
      AspectExample ex;
      ex.example_id = id;
      ex.sentence = text;
      ex.aspect = op["target_entity"].get<std::string>();
      ex.label = *label;
      ex.split = split;
      ex.span = utf8_find(text, ex.aspect);
      report.examples.push_back(std::move(ex));
    }
  }
  return report;
}

inline ParseReport parse_dataset(DatasetKind kind, const std::filesystem::path& path, Split split) {
  switch (kind) {
    case DatasetKind::kSemEval14: return parse_semeval14(path, split);
    case DatasetKind::kSemEval16: return parse_semeval16(path, split);
    case DatasetKind::kSentiHood: return parse_sentihood(path, split);
  }
  throw InputError("unknown dataset kind");
}

// ---------------------------------------------------------------------------
// Manifest

struct DatasetManifest {
  std::string dataset;
  std::vector<std::string> scheme;
  std::vector<AspectExample> examples;
  /// tallies[split][label]
  std::map<std::string, std::map<std::string, std::size_t>> tallies;
  /// Examples excluded because their label is outside the scheme.
  std::map<std::string, std::size_t> dropped;

  std::size_t label_id(const std::string& label) const {
    const auto it = std::find(scheme.begin(), scheme.end(), label);
    if (it == scheme.end()) throw ValidationError("label '" + label + "' is not in the scheme");
    return static_cast<std::size_t>(it - scheme.begin());
  }

  std::size_t class_count() const noexcept { return scheme.size(); }
};

inline std::map<std::string, std::map<std::string, std::size_t>> recount(
    const std::vector<AspectExample>& examples) {
  std::map<std::string, std::map<std::string, std::size_t>> t;
  for (const auto& e : examples) ++t[to_string(e.split)][e.label];
  return t;
}

/// Keeps examples whose label is in the scheme, sorts them by id and tallies
/// them.
inline DatasetManifest build_manifest(std::vector<AspectExample> examples,
                                      const std::vector<std::string>& scheme,
                                      std::string dataset = {}) {
  DatasetManifest m;
  m.dataset = std::move(dataset);
  m.scheme = scheme;
  for (auto& e : examples) {
    if (std::find(scheme.begin(), scheme.end(), e.label) == scheme.end()) {
      ++m.dropped[e.label];
      continue;
    }
    m.examples.push_back(std::move(e));
  }
  if (m.examples.empty()) {
    throw ConfigError("no examples remain after filtering to the label scheme");
  }
  std::stable_sort(m.examples.begin(), m.examples.end(),
                   [](const auto& a, const auto& b) { return a.example_id < b.example_id; });
  for (std::size_t i = 1; i < m.examples.size(); ++i) {
    if (m.examples[i].example_id == m.examples[i - 1].example_id) {
      throw ValidationError("duplicate example id " + m.examples[i].example_id);
    }
  }
  m.tallies = recount(m.examples);
  return m;
}

inline DatasetManifest build_manifest(std::vector<AspectExample> examples, LabelScheme scheme,
                                      std::string dataset = {}) {
  return build_manifest(std::move(examples), scheme_labels(scheme), std::move(dataset));
}

inline constexpr std::string_view kManifestFormat = "bertil-manifest";

/// Line-delimited JSON: a header object, then one object per example.
inline void write_manifest(std::ostream& out, const DatasetManifest& m,
                           const nlohmann::json& provenance = nlohmann::json::object()) {
  nlohmann::json header = {{"format", kManifestFormat},
                           {"version", 1},
                           {"dataset", m.dataset},
                           {"scheme", m.scheme},
                           {"tallies", m.tallies},
                           {"dropped", m.dropped},
                           {"provenance", provenance}};
  out << header.dump() << '\n';
  for (const auto& e : m.examples) {
    nlohmann::json line = {{"example_id", e.example_id},
                           {"split", to_string(e.split)},
                           {"label", e.label},
                           {"aspect", e.aspect},
                           {"span_start", nullptr},
                           {"span_end", nullptr},
                           {"sentence", e.sentence}};
    if (e.span) {
      line["span_start"] = e.span->start;
      line["span_end"] = e.span->end;
    }
    out << line.dump() << '\n';
  }
  if (!out) throw IoError("manifest write failed");
}

inline void write_manifest(const std::filesystem::path& path, const DatasetManifest& m,
                           const nlohmann::json& provenance = nlohmann::json::object()) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  write_manifest(out, m, provenance);
}

inline DatasetManifest read_manifest(std::istream& in, const std::string& source = "manifest") {
  DatasetManifest m;
  std::string line;
  std::size_t line_no = 0;
  bool have_header = false;
  std::unordered_set<std::string> ids;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    const std::string where = source + ":" + std::to_string(line_no);
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::parse_error& e) {
      throw FormatError(where + ": " + e.what());
    }
    try {
      if (!have_header) {
        if (j.value("format", "") != kManifestFormat) {
          throw FormatError(where + ": not a manifest header");
        }
        m.dataset = j.value("dataset", "");
        m.scheme = j.at("scheme").get<std::vector<std::string>>();
        if (j.contains("dropped")) m.dropped = j["dropped"].get<std::map<std::string, std::size_t>>();
        have_header = true;
        continue;
      }
      AspectExample e;
      e.example_id = j.at("example_id").get<std::string>();
      e.split = parse_split(j.at("split").get<std::string>());
      e.label = j.at("label").get<std::string>();
      e.aspect = j.at("aspect").get<std::string>();
      e.sentence = j.at("sentence").get<std::string>();
      if (!j.at("span_start").is_null()) {
        e.span = CharSpan{j.at("span_start").get<std::size_t>(), j.at("span_end").get<std::size_t>()};
        const auto sub = utf8_substr(e.sentence, *e.span);
        if (!sub || *sub != e.aspect) {
          throw ValidationError(where + ": span does not select the aspect '" + e.aspect + "'");
        }
      }
      if (std::find(m.scheme.begin(), m.scheme.end(), e.label) == m.scheme.end()) {
        throw ValidationError(where + ": label '" + e.label + "' is not in the scheme");
      }
      if (!ids.insert(e.example_id).second) {
        throw ValidationError(where + ": duplicate example id " + e.example_id);
      }
      m.examples.push_back(std::move(e));
    } catch (const nlohmann::json::exception& e) {
      throw FormatError(where + ": " + e.what());
    } catch (const InputError& e) {
      throw FormatError(where + ": " + e.what());
    }
  }
  if (!have_header) throw FormatError(source + ": empty manifest");
  m.tallies = recount(m.examples);
  return m;
}

inline DatasetManifest read_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open manifest " + path.string());
  return read_manifest(in, path.string());
}

// ---------------------------------------------------------------------------
// Reference corpus statistics

/// Published per-label counts for one dataset split. Missing labels have no
/// published cell. `total` counts labeled pairs including the "None" rows,
/// which this engine does not produce.
struct ReferenceTallies {
  std::map<std::string, std::size_t> cells;
  std::size_t none = 0;
  std::size_t total = 0;
};

inline ReferenceTallies reference_tallies(DatasetKind d, Split s) {
  const bool train = s == Split::kTrain;
  switch (d) {
    case DatasetKind::kSemEval14:
      return train ? ReferenceTallies{{{"positive", 2176}, {"negative", 839}, {"neutral", 501}, {"conflict", 196}}, 11508, 15220}
                   : ReferenceTallies{{{"positive", 657}, {"negative", 222}, {"neutral", 94}, {"conflict", 52}}, 2975, 4000};
    case DatasetKind::kSemEval16:
      return train ? ReferenceTallies{{{"positive", 1400}, {"negative", 648}, {"neutral", 96}}, 7856, 10000}
                   : ReferenceTallies{{{"positive", 487}, {"negative", 180}, {"neutral", 42}}, 2671, 3380};
    case DatasetKind::kSentiHood:
      return train ? ReferenceTallies{{{"positive", 1626}, {"negative", 834}}, 12548, 15008}
                   : ReferenceTallies{{{"positive", 810}, {"negative", 406}}, 6300, 7516};
  }
  return {};
}

struct TallyCell {
  std::string label;
  std::size_t expected = 0;
  std::size_t found = 0;
  bool ok() const { return expected == found; }
};

struct TallyVerification {
  std::vector<TallyCell> cells;
  std::size_t sentence_count = 0;
  std::size_t example_count = 0;
  std::size_t reference_total = 0;
  /// Which of the two counts matches the published total, if either.
  std::string total_note;

  bool ok() const {
    return std::all_of(cells.begin(), cells.end(), [](const TallyCell& c) { return c.ok(); });
  }
};

/// Compares parsed label tallies against `expected`, cell by cell. Only the
/// labels with an expected cell are checked.
inline TallyVerification verify_tallies(const ParseReport& report, const ReferenceTallies& expected) {
  TallyVerification v;
  const auto found = report.tallies();
  for (const char* label : {"positive", "negative", "neutral", "conflict"}) {
    const auto it = expected.cells.find(label);
    if (it == expected.cells.end()) continue;
    const auto f = found.find(label);
    v.cells.push_back({label, it->second, f == found.end() ? 0 : f->second});
  }
  v.sentence_count = report.sentence_count;
  v.example_count = report.examples.size();
  v.reference_total = expected.total;
  if (expected.total == v.sentence_count) {
    v.total_note = "sentence count matches the published total";
  } else if (expected.total == v.example_count + expected.none) {
    v.total_note = "example count plus the published None cell matches the published total";
  } else {
    v.total_note = "neither sentence count (" + std::to_string(v.sentence_count) +
                   ") nor example count (" + std::to_string(v.example_count) +
                   ") matches the published total " + std::to_string(expected.total);
  }
  return v;
}

}  // namespace bertil
