#pragma once

#include <optional>
#include <string>
#include <vector>

namespace spritediff {

enum class ShapeClass { Circle = 0, Square = 1, Triangle = 2, Star = 3 };
enum class PatternType { Stripes = 0, Dots = 1, Glyph = 2 };

inline constexpr int kNumShapes = 4;
inline constexpr int kNumColors = 6;
inline constexpr int kNumPatterns = 3;
inline constexpr int kMaxCaptionLen = 8;

// Sprite palette in the [-1,1] data range.
inline constexpr double kPalette[kNumColors][3] = {
    {1, -1, -1},  // red
    {-1, 1, -1},  // green
    {-1, -1, 1},  // blue
    {1, 1, -1},   // yellow
    {-1, 1, 1},   // cyan
    {1, -1, 1},   // magenta
};

const std::string& color_word(int color);
const std::string& shape_word(ShapeClass shape);
const std::string& pattern_word(PatternType pattern);

// Fixed token layout shared by captions and the text encoder. The [S*] slot
// is the last id; its embedding row lives outside the base table so it can
// train at its own learning rate.
struct Vocab {
    static constexpr int kPad = 0;
    static constexpr int kUc = 1;  // undesired-condition token
    static constexpr int kA = 2;
    static constexpr int kOn = 3;
    static constexpr int kWith = 4;
    static constexpr int kGradient = 5;
    static constexpr int kColor0 = 6;
    static constexpr int kShape0 = kColor0 + kNumColors;
    static constexpr int kPattern0 = kShape0 + kNumShapes;
    static constexpr int kSStar = kPattern0 + kNumPatterns;
    static constexpr int kSize = kSStar + 1;

    static int color_token(int c) { return kColor0 + c; }
    static int shape_token(ShapeClass s) { return kShape0 + static_cast<int>(s); }
    static int pattern_token(PatternType p) { return kPattern0 + static_cast<int>(p); }

    static const std::vector<std::string>& words();
    static int token_from_word(const std::string& word);  // -1 when unknown
};

// Structured caption over the fixed grammar
//   "a" [color] shape ["[S*]"] ["with" pattern] ["on" background]
// padded to kMaxCaptionLen tokens. Parsing is strict and round-trips.
struct Caption {
    struct Background {
        bool gradient = false;
        int color = -1;  // valid when !gradient
        bool operator==(const Background&) const = default;
    };

    std::optional<int> color;
    std::optional<ShapeClass> shape;
    bool s_star = false;
    std::optional<PatternType> detail;
    std::optional<Background> background;

    std::vector<int> tokens() const;
    std::string text() const;
    int attribute_count() const;  // color/shape/background/detail slots present

    static Caption parse_tokens(const std::vector<int>& toks);
    static Caption parse_text(const std::string& text);
    static std::vector<int> uncond_tokens();

    bool operator==(const Caption&) const = default;
};

}  // namespace spritediff
