#include "fairsearch/gender_text.hpp"

#include <algorithm>
#include <unordered_map>

#include "jsonl.hpp"

namespace fairsearch {

using detail::json;

namespace {

bool is_alpha(char c) { return (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z'); }
bool is_upper(char c) { return c >= 'A' && c <= 'Z'; }
char to_lower(char c) { return is_upper(c) ? static_cast<char>(c - 'A' + 'a') : c; }
char to_upper(char c) { return (c >= 'a' && c <= 'z') ? static_cast<char>(c - 'a' + 'A') : c; }

std::string lower(std::string_view s) {
  std::string out(s);
  std::transform(out.begin(), out.end(), out.begin(), to_lower);
  return out;
}

bool is_space_run(std::string_view s) {
  return !s.empty() && std::all_of(s.begin(), s.end(), [](char c) {
    return c == ' ' || c == '\t';
  });
}

// Words after which a removable adjective is not treated as attributive.
const std::set<std::string, std::less<>>& function_words() {
  static const std::set<std::string, std::less<>> words = {
      "a",    "an",  "and",  "are",   "as",  "at",    "be",   "been", "but", "by",
      "for",  "from", "has", "have",  "in",  "is",    "near", "of",   "on",  "or",
      "than", "that", "the", "their", "to",  "was",   "were", "which", "while", "who",
      "whose", "with"};
  return words;
}

// Copies the capitalization pattern of `like` onto `word`.
std::string match_case(std::string word, std::string_view like) {
  if (word.empty() || like.empty()) return word;
  const bool all_caps = like.size() > 1 && std::none_of(like.begin(), like.end(), [](char c) {
    return c >= 'a' && c <= 'z';
  });
  if (all_caps) {
    std::transform(word.begin(), word.end(), word.begin(), to_upper);
  } else if (is_upper(like.front())) {
    word.front() = to_upper(word.front());
  }
  return word;
}

struct Segment {
  std::string text;
  bool word = false;
};

std::vector<Segment> segment(std::string_view text) {
  std::vector<Segment> segs;
  std::size_t i = 0;
  while (i < text.size()) {
    const bool word = is_alpha(text[i]);
    std::size_t j = i;
    while (j < text.size() && is_alpha(text[j]) == word) ++j;
    segs.push_back({std::string(text.substr(i, j - i)), word});
    i = j;
  }
  return segs;
}

std::vector<std::string> split_words(std::string_view phrase) {
  std::vector<std::string> out;
  for (auto& seg : segment(phrase)) {
    if (seg.word) out.push_back(lower(seg.text));
  }
  return out;
}

bool is_gendered(const GenderLexicon& lex, std::string_view w) {
  return lex.masculine.count(w) > 0 || lex.feminine.count(w) > 0;
}

void apply_phrases(std::vector<Segment>& segs, const GenderLexicon& lex) {
  if (lex.phrases.empty()) return;
  std::vector<std::pair<std::vector<std::string>, std::string>> rules;
  for (const auto& [key, target] : lex.phrases) rules.emplace_back(split_words(key), target);

  for (std::size_t i = 0; i < segs.size(); ++i) {
    if (!segs[i].word) continue;
    for (const auto& [words, target] : rules) {
      const std::size_t span = 2 * words.size() - 1;
      if (words.empty() || i + span > segs.size()) continue;
      bool match = true;
      for (std::size_t w = 0; w < words.size() && match; ++w) {
        const auto& s = segs[i + 2 * w];
        match = s.word && lower(s.text) == words[w];
        if (match && w + 1 < words.size()) match = is_space_run(segs[i + 2 * w + 1].text);
      }
      if (!match) continue;
      segs[i].text = match_case(target, segs[i].text);
      segs.erase(segs.begin() + static_cast<std::ptrdiff_t>(i + 1),
                 segs.begin() + static_cast<std::ptrdiff_t>(i + span));
      break;
    }
  }
}

bool ends_sentence(std::string_view s) {
  return s.find_first_of(".!?") != std::string_view::npos;
}

}  // namespace

void GenderLexicon::validate() const {
  for (const auto& w : masculine) {
    if (feminine.count(w)) throw ValidationError("lexicon word \"" + w + "\" is both masculine and feminine");
  }
  for (const auto& w : neutral) {
    if (is_gendered(*this, w)) throw ValidationError("lexicon word \"" + w + "\" is listed as neutral and gendered");
  }
  for (const auto& [key, target] : replacement) {
    if (!is_gendered(*this, key)) {
      throw ValidationError("replacement key \"" + key + "\" is not a gendered word");
    }
    for (const auto& t : split_words(target)) {
      if (is_gendered(*this, t)) {
        throw ValidationError("replacement for \"" + key + "\" contains gendered word \"" + t + "\"");
      }
    }
  }
  for (const auto& [key, target] : phrases) {
    auto words = split_words(key);
    if (words.empty()) throw ValidationError("empty phrase rule");
    if (std::none_of(words.begin(), words.end(), [&](const auto& w) { return is_gendered(*this, w); })) {
      throw ValidationError("phrase \"" + key + "\" contains no gendered word");
    }
    for (const auto& t : split_words(target)) {
      if (is_gendered(*this, t)) {
        throw ValidationError("phrase target for \"" + key + "\" contains gendered word \"" + t + "\"");
      }
    }
  }
}

GenderLexicon default_lexicon() {
  GenderLexicon lex;
  lex.feminine = {"woman",  "women",    "female",   "girl", "lady",      "mother",
                  "mom",    "sister",   "daughter", "wife", "girlfriend"};
  lex.masculine = {"man",    "men",     "male", "boy",     "gentleman",
                   "father", "brother", "son",  "husband", "boyfriend"};
  lex.neutral = {"person", "people", "human", "adult", "baby",  "child",
                 "kid",    "children", "guy", "teenage", "crowd"};
  lex.replacement = {
      {"man", "person"},       {"men", "people"},         {"male", ""},
      {"boy", "child"},        {"gentleman", "person"},   {"father", "parent"},
      {"brother", "sibling"},  {"son", "child"},          {"husband", "spouse"},
      {"boyfriend", "partner"}, {"woman", "person"},      {"women", "people"},
      {"female", ""},          {"girl", "child"},         {"lady", "person"},
      {"mother", "parent"},    {"mom", "parent"},         {"sister", "sibling"},
      {"daughter", "child"},   {"wife", "spouse"},        {"girlfriend", "partner"},
  };
  lex.phrases = {{"men and women", "people"}, {"women and men", "people"}};
  return lex;
}

GenderLexicon load_lexicon(const std::string& path) {
  json obj;
  try {
    obj = json::parse(detail::read_file(path));
  } catch (const json::parse_error& e) {
    throw ValidationError(path + ": " + e.what());
  }
  if (!obj.is_object()) throw ValidationError(path + ": lexicon must be a JSON object");
  GenderLexicon lex;
  auto read_set = [&](const char* key, auto& dst) {
    auto it = obj.find(key);
    if (it == obj.end() || !it->is_array()) {
      throw ValidationError(path + ": \"" + key + "\" must be an array of strings");
    }
    for (const auto& w : *it) {
      if (!w.is_string()) throw ValidationError(path + ": \"" + key + "\" must hold strings");
      dst.insert(lower(w.template get<std::string>()));
    }
  };
  read_set("masculine", lex.masculine);
  read_set("feminine", lex.feminine);
  read_set("neutral", lex.neutral);
  auto read_map = [&](const char* key, auto& dst) {
    auto it = obj.find(key);
    if (it == obj.end()) return false;
    if (!it->is_object()) throw ValidationError(path + ": \"" + key + "\" must be an object");
    for (const auto& [k, v] : it->items()) {
      if (v.is_null()) {
        dst[lower(k)] = "";
      } else if (v.is_string()) {
        dst[lower(k)] = v.template get<std::string>();
      } else {
        throw ValidationError(path + ": \"" + key + "\" values must be strings or null");
      }
    }
    return true;
  };
  if (!read_map("replacement", lex.replacement)) {
    throw ValidationError(path + ": missing \"replacement\" object");
  }
  if (!read_map("phrases", lex.phrases)) lex.phrases = default_lexicon().phrases;
  // Drop built-in phrases that do not apply to a custom word list.
  std::erase_if(lex.phrases, [&](const auto& kv) {
    auto words = split_words(kv.first);
    return std::none_of(words.begin(), words.end(), [&](const auto& w) { return is_gendered(lex, w); });
  });
  lex.validate();
  return lex;
}

std::vector<Caption> load_captions(const std::string& path) {
  std::vector<Caption> out;
  detail::for_each_jsonl(path, [&](const json& obj, std::size_t line) {
    try {
      Caption c{detail::string_field(obj, "id", line), detail::string_field(obj, "image_id", line),
                detail::string_field(obj, "text", line)};
      if (c.text.empty()) throw ValidationError("caption " + c.id + " has empty text");
      out.push_back(std::move(c));
    } catch (const ValidationError& e) {
      throw ValidationError(path + ": " + e.what());
    }
  });
  return out;
}

void save_captions(std::span<const Caption> captions, const std::string& path) {
  auto out = detail::open_for_write(path);
  for (const auto& c : captions) {
    out << json{{"id", c.id}, {"image_id", c.image_id}, {"text", c.text}}.dump() << '\n';
  }
  out.flush();
  if (!out) throw RuntimeFailure("write failed: " + path);
}

std::string_view to_string(CaptionGender g) {
  switch (g) {
    case CaptionGender::None: return "none";
    case CaptionGender::HasMasc: return "masculine";
    case CaptionGender::HasFem: return "feminine";
    case CaptionGender::HasBoth: return "both";
  }
  return "none";
}

std::vector<std::string> tokenize(std::string_view text) { return split_words(text); }

CaptionGender caption_gender(std::string_view text, const GenderLexicon& lex) {
  bool masc = false;
  bool fem = false;
  for (const auto& tok : tokenize(text)) {
    masc = masc || lex.masculine.count(tok) > 0;
    fem = fem || lex.feminine.count(tok) > 0;
  }
  if (masc && fem) return CaptionGender::HasBoth;
  if (masc) return CaptionGender::HasMasc;
  if (fem) return CaptionGender::HasFem;
  return CaptionGender::None;
}

Gender image_gender(std::span<const CaptionGender> caption_genders) {
  if (caption_genders.empty()) throw ValidationError("image_gender needs at least one caption");
  bool masc = false;
  bool fem = false;
  for (auto g : caption_genders) {
    masc = masc || g == CaptionGender::HasMasc || g == CaptionGender::HasBoth;
    fem = fem || g == CaptionGender::HasFem || g == CaptionGender::HasBoth;
  }
  if (masc && !fem) return Gender::Male;
  if (fem && !masc) return Gender::Female;
  return Gender::Neutral;
}

Gender image_gender(std::span<const Caption> captions, const GenderLexicon& lex) {
  if (captions.empty()) throw ValidationError("image_gender needs at least one caption");
  std::vector<CaptionGender> gs;
  gs.reserve(captions.size());
  for (const auto& c : captions) {
    if (c.image_id != captions.front().image_id) {
      throw ValidationError("captions for one image must share image_id");
    }
    gs.push_back(caption_gender(c, lex));
  }
  return image_gender(gs);
}

std::string neutralize(std::string_view text, const GenderLexicon& lex) {
  auto segs = segment(text);
  apply_phrases(segs, lex);

  std::string out;
  out.reserve(text.size());
  bool sentence_start = true;
  bool capitalize_next = false;
  for (std::size_t i = 0; i < segs.size(); ++i) {
    auto& seg = segs[i];
    if (!seg.word) {
      if (ends_sentence(seg.text)) sentence_start = true;
      out += seg.text;
      continue;
    }
    if (capitalize_next) {
      seg.text.front() = to_upper(seg.text.front());
      capitalize_next = false;
    }
    const auto key = lower(seg.text);
    if (!is_gendered(lex, key)) {
      out += seg.text;
      sentence_start = false;
      continue;
    }
    auto it = lex.replacement.find(key);
    std::string target = it != lex.replacement.end() ? it->second : "person";
    if (target.empty()) {
      const bool attributive = i + 2 < segs.size() && is_space_run(segs[i + 1].text) &&
                               segs[i + 2].word && !function_words().count(lower(segs[i + 2].text));
      if (attributive) {
        capitalize_next = sentence_start && is_upper(seg.text.front());
        ++i;  // drop the following space as well
        continue;
      }
      target = "person";
    }
    out += match_case(target, seg.text);
    sentence_start = false;
  }
  return out;
}

LabelMap label_images(std::span<const Caption> captions, const GenderLexicon& lex) {
  std::map<std::string, std::vector<CaptionGender>, std::less<>> grouped;
  for (const auto& c : captions) grouped[c.image_id].push_back(caption_gender(c, lex));
  LabelMap labels;
  for (const auto& [image_id, gs] : grouped) labels.emplace(image_id, image_gender(gs));
  return labels;
}

}  // namespace fairsearch
