#pragma once

#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "pasttense/errors.hpp"

namespace pasttense {

using Phonemes = std::vector<std::string>;

enum class Voicing { vowel, voiced, voiceless };
enum class Allomorph { d, t, id };

inline const char* allomorph_name(Allomorph a) { return a == Allomorph::d ? "d" : a == Allomorph::t ? "t" : "id"; }

inline Phonemes allomorph_segments(Allomorph a) {
  switch (a) {
    case Allomorph::d: return {"d"};
    case Allomorph::t: return {"t"};
    case Allomorph::id: return {"ɪ", "d"};
  }
  return {};
}

// The phoneme inventory with a voicing class per IPA segment.  The same
// table ships as data/phonemes.tsv; Inventory::standard() is its compiled-in
// copy so library code never depends on the working directory.
class Inventory {
 public:
  static const Inventory& standard() {
    static const Inventory inv = parse(kStandardTable, "<built-in>");
    return inv;
  }

  static Inventory load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open phoneme inventory " + path);
    std::stringstream ss;
    ss << in.rdbuf();
    return parse(ss.str(), path);
  }

  static Inventory parse(const std::string& text, const std::string& origin) {
    Inventory inv;
    std::istringstream in(text);
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
      ++lineno;
      if (!line.empty() && line.back() == '\r') line.pop_back();
      if (lineno == 1 || line.empty()) continue;
      const auto tab = line.find('\t');
      if (tab == std::string::npos) throw DataError(origin + ":" + std::to_string(lineno) + ": expected segment<TAB>type");
      const std::string seg = line.substr(0, tab), type = line.substr(tab + 1);
      Voicing v;
      if (type == "vowel") v = Voicing::vowel;
      else if (type == "voiced") v = Voicing::voiced;
      else if (type == "voiceless") v = Voicing::voiceless;
      else throw DataError(origin + ":" + std::to_string(lineno) + ": unknown segment type '" + type + "'");
      inv.table_[seg] = v;
      inv.order_.push_back(seg);
    }
    return inv;
  }

  bool contains(const std::string& seg) const { return table_.count(seg) > 0; }
  Voicing voicing(const std::string& seg) const {
    auto it = table_.find(seg);
    if (it == table_.end()) throw DataError("unknown phoneme '" + seg + "'");
    return it->second;
  }
  bool is_vowel(const std::string& seg) const { return voicing(seg) == Voicing::vowel; }
  const std::vector<std::string>& segments() const { return order_; }

 private:
  std::map<std::string, Voicing> table_;
  std::vector<std::string> order_;

  static constexpr const char* kStandardTable =
      "segment\ttype\n"
      "i\tvowel\nɪ\tvowel\neɪ\tvowel\nɛ\tvowel\næ\tvowel\nɑ\tvowel\nɔ\tvowel\noʊ\tvowel\nʊ\tvowel\nu\tvowel\n"
      "ʌ\tvowel\nə\tvowel\nɚ\tvowel\nɝ\tvowel\naɪ\tvowel\naʊ\tvowel\nɔɪ\tvowel\n"
      "b\tvoiced\nd\tvoiced\ng\tvoiced\nv\tvoiced\nð\tvoiced\nz\tvoiced\nʒ\tvoiced\ndʒ\tvoiced\nm\tvoiced\n"
      "n\tvoiced\nŋ\tvoiced\nl\tvoiced\nr\tvoiced\nw\tvoiced\nj\tvoiced\n"
      "p\tvoiceless\nt\tvoiceless\nk\tvoiceless\nf\tvoiceless\nθ\tvoiceless\ns\tvoiceless\nʃ\tvoiceless\n"
      "tʃ\tvoiceless\nh\tvoiceless\n";
};

// Regular suffix conditioning: /ɪd/ after /t/ or /d/, /t/ after any other
// voiceless segment, /d/ after vowels and voiced consonants.
inline Allomorph allomorph_for(const Phonemes& stem, const Inventory& inv = Inventory::standard()) {
  if (stem.empty()) throw DataError("allomorph_for: empty stem");
  const std::string& last = stem.back();
  if (last == "t" || last == "d") return Allomorph::id;
  return inv.voicing(last) == Voicing::voiceless ? Allomorph::t : Allomorph::d;
}

inline Phonemes regular_past(const Phonemes& stem, const Inventory& inv = Inventory::standard()) {
  Phonemes out = stem;
  for (auto& s : allomorph_segments(allomorph_for(stem, inv))) out.push_back(s);
  return out;
}

inline Phonemes split_ipa(const std::string& s) {
  Phonemes out;
  std::istringstream in(s);
  std::string seg;
  while (in >> seg) out.push_back(seg);
  return out;
}

inline std::string join_ipa(const Phonemes& p, const std::string& sep = " ") {
  std::string out;
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (i) out += sep;
    out += p[i];
  }
  return out;
}

}  // namespace pasttense
