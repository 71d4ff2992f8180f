#include "spritediff/vocab.hpp"

#include <sstream>

#include "spritediff/errors.hpp"

namespace spritediff {

namespace {

const std::vector<std::string> kColorWords = {"red", "green", "blue", "yellow", "cyan", "magenta"};
const std::vector<std::string> kShapeWords = {"circle", "square", "triangle", "star"};
const std::vector<std::string> kPatternWords = {"striped", "dotted", "marked"};

std::vector<std::string> build_words() {
    std::vector<std::string> w = {"<pad>", "<uc>", "a", "on", "with", "gradient"};
    for (const auto& s : kColorWords) w.push_back(s);
    for (const auto& s : kShapeWords) w.push_back(s);
    for (const auto& s : kPatternWords) w.push_back(s);
    w.push_back("[S*]");
    return w;
}

}  // namespace

const std::string& color_word(int color) {
    if (color < 0 || color >= kNumColors) throw ValueError("color index out of range");
    return kColorWords[color];
}

const std::string& shape_word(ShapeClass shape) { return kShapeWords[static_cast<int>(shape)]; }

const std::string& pattern_word(PatternType pattern) {
    return kPatternWords[static_cast<int>(pattern)];
}

const std::vector<std::string>& Vocab::words() {
    static const std::vector<std::string> w = build_words();
    return w;
}

int Vocab::token_from_word(const std::string& word) {
    const auto& w = words();
    for (size_t i = 0; i < w.size(); ++i)
        if (w[i] == word) return static_cast<int>(i);
    return -1;
}

std::vector<int> Caption::tokens() const {
    std::vector<int> t;
    t.push_back(Vocab::kA);
    if (color) t.push_back(Vocab::color_token(*color));
    if (!shape) throw ContractError("caption: shape slot is required");
    t.push_back(Vocab::shape_token(*shape));
    if (s_star) t.push_back(Vocab::kSStar);
    if (detail) {
        t.push_back(Vocab::kWith);
        t.push_back(Vocab::pattern_token(*detail));
    }
    if (background) {
        t.push_back(Vocab::kOn);
        t.push_back(background->gradient ? Vocab::kGradient
                                         : Vocab::color_token(background->color));
    }
    if (static_cast<int>(t.size()) > kMaxCaptionLen)
        throw ContractError("caption: exceeds maximum length");
    while (static_cast<int>(t.size()) < kMaxCaptionLen) t.push_back(Vocab::kPad);
    return t;
}

std::string Caption::text() const {
    std::ostringstream os;
    const auto& w = Vocab::words();
    auto toks = tokens();
    bool first = true;
    for (int t : toks) {
        if (t == Vocab::kPad) continue;
        os << (first ? "" : " ") << w[t];
        first = false;
    }
    return os.str();
}

int Caption::attribute_count() const {
    int n = 0;
    if (color) ++n;
    if (shape) ++n;
    if (background) ++n;
    if (detail) ++n;
    return n;
}

Caption Caption::parse_tokens(const std::vector<int>& toks) {
    Caption c;
    size_t i = 0;
    auto fail = [&](const std::string& why) -> ContractError {
        return ContractError("caption: unparseable token sequence (" + why + ")");
    };
    auto at = [&](size_t j) { return j < toks.size() ? toks[j] : Vocab::kPad; };
    if (at(i) != Vocab::kA) throw fail("expected leading 'a'");
    ++i;
    int t = at(i);
    if (t >= Vocab::kColor0 && t < Vocab::kColor0 + kNumColors) {
        c.color = t - Vocab::kColor0;
        ++i;
        t = at(i);
    }
    if (!(t >= Vocab::kShape0 && t < Vocab::kShape0 + kNumShapes)) throw fail("expected shape word");
    c.shape = static_cast<ShapeClass>(t - Vocab::kShape0);
    ++i;
    if (at(i) == Vocab::kSStar) {
        c.s_star = true;
        ++i;
    }
    if (at(i) == Vocab::kWith) {
        ++i;
        t = at(i);
        if (!(t >= Vocab::kPattern0 && t < Vocab::kPattern0 + kNumPatterns))
            throw fail("expected pattern word after 'with'");
        c.detail = static_cast<PatternType>(t - Vocab::kPattern0);
        ++i;
    }
    if (at(i) == Vocab::kOn) {
        ++i;
        t = at(i);
        Background bg;
        if (t == Vocab::kGradient) {
            bg.gradient = true;
        } else if (t >= Vocab::kColor0 && t < Vocab::kColor0 + kNumColors) {
            bg.color = t - Vocab::kColor0;
        } else {
            throw fail("expected background word after 'on'");
        }
        c.background = bg;
        ++i;
    }
    for (; i < toks.size(); ++i)
        if (toks[i] != Vocab::kPad) throw fail("trailing tokens");
    return c;
}

Caption Caption::parse_text(const std::string& text) {
    std::istringstream is(text);
    std::vector<int> toks;
    std::string word;
    while (is >> word) {
        int t = Vocab::token_from_word(word);
        if (t < 0) throw ContractError("caption: unknown word '" + word + "'");
        toks.push_back(t);
    }
    if (static_cast<int>(toks.size()) > kMaxCaptionLen)
        throw ContractError("caption: too many words");
    while (static_cast<int>(toks.size()) < kMaxCaptionLen) toks.push_back(Vocab::kPad);
    return parse_tokens(toks);
}

std::vector<int> Caption::uncond_tokens() {
    std::vector<int> t(kMaxCaptionLen, Vocab::kPad);
    t[0] = Vocab::kUc;
    return t;
}

}  // namespace spritediff
