#pragma once

#include <map>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "fairsearch/core.hpp"

namespace fairsearch {

/// Gendered word lists plus the rewrite rules used to neutralize captions.
struct GenderLexicon {
  std::set<std::string, std::less<>> masculine;
  std::set<std::string, std::less<>> feminine;
  std::set<std::string, std::less<>> neutral;
  // Gendered word -> neutral replacement. An empty string removes the word
  // when it modifies a following noun ("female surfer" -> "surfer").
  std::map<std::string, std::string, std::less<>> replacement;
  // Multi-word rewrites applied before single-token rules, keyed by the
  // lowercase phrase with single spaces ("men and women" -> "people").
  std::map<std::string, std::string, std::less<>> phrases;

  // Throws ValidationError when the word sets overlap, a replacement key is
  // not gendered, or a replacement target itself contains a gendered word.
  void validate() const;
};

GenderLexicon default_lexicon();

// JSON object with "masculine", "feminine", "neutral" (string arrays) and
// "replacement" (object; null or "" values mean removal). An optional
// "phrases" object overrides the built-in phrase rules.
GenderLexicon load_lexicon(const std::string& path);

struct Caption {
  std::string id;
  std::string image_id;
  std::string text;
};

std::vector<Caption> load_captions(const std::string& path);
void save_captions(std::span<const Caption> captions, const std::string& path);

enum class CaptionGender { None, HasMasc, HasFem, HasBoth };

std::string_view to_string(CaptionGender g);

// ASCII-lowercased maximal runs of letters.
std::vector<std::string> tokenize(std::string_view text);

CaptionGender caption_gender(std::string_view text, const GenderLexicon& lex);
inline CaptionGender caption_gender(const Caption& c, const GenderLexicon& lex) {
  return caption_gender(c.text, lex);
}

// Male when some caption is masculine-only and none mentions a feminine
// word; Female symmetrically; Neutral otherwise. Throws on an empty list.
Gender image_gender(std::span<const CaptionGender> caption_genders);
Gender image_gender(std::span<const Caption> captions, const GenderLexicon& lex);

std::string neutralize(std::string_view text, const GenderLexicon& lex);
inline Caption neutralize(const Caption& c, const GenderLexicon& lex) {
  return {c.id, c.image_id, neutralize(c.text, lex)};
}

// Groups captions by image_id and labels each image.
LabelMap label_images(std::span<const Caption> captions, const GenderLexicon& lex);

}  // namespace fairsearch
