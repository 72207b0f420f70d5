#include <gtest/gtest.h>

#include "gath/synthbench.hpp"
#include "support.hpp"

using namespace gath;
using namespace gath::synth;
using namespace gath::testing;

namespace {

struct Box {
    int x0, y0, x1, y1;  // inclusive pixel bounds
};

Box to_pixels(const PartRegion& r, int side) {
    return {int(std::floor(r.u0 * side)), int(std::floor(r.v0 * side)), int(std::ceil(r.u1 * side)) - 1,
            int(std::ceil(r.v1 * side)) - 1};
}

bool inside(const Box& b, int x, int y) { return x >= b.x0 && x <= b.x1 && y >= b.y0 && y <= b.y1; }

/// Pixels whose value differs between two renders must fall inside `box`.
void expect_changes_only_inside(const ImageTensor& a, const ImageTensor& b, const Box& box) {
    int changed = 0;
    const int side = a.height();
    for (int y = 0; y < side; ++y)
        for (int x = 0; x < side; ++x) {
            bool diff = false;
            for (int c = 0; c < 3; ++c) diff = diff || a.tensor().at(0, c, y, x) != b.tensor().at(0, c, y, x);
            if (diff) {
                ++changed;
                EXPECT_TRUE(inside(box, x, y)) << "pixel (" << x << "," << y << ") changed";
            }
        }
    EXPECT_GT(changed, 0);
}

}  // namespace

TEST(Sprite, RenderIsDeterministic) {
    SpriteIdentity id;
    SpriteExpression ex{0.3, 0.6, 0.2, 0.1};
    auto a = sprite_render(id, ex, 32), b = sprite_render(id, ex, 32);
    EXPECT_EQ(a.image, b.image);
    EXPECT_EQ(a.mask, b.mask);
}

TEST(Sprite, MouthOpenChangesOnlyTheMouthRegion) {
    std::mt19937_64 rng(2);
    for (int t = 0; t < 5; ++t) {
        auto id = random_identity(rng);
        auto ex = random_expression(rng);
        auto closed = ex, open = ex;
        closed.mouth_open = 0;
        open.mouth_open = 1;
        for (int side : {32, 64})
            expect_changes_only_inside(sprite_render(id, closed, side).image, sprite_render(id, open, side).image,
                                       to_pixels(kMouthRegion, side));
    }
}

TEST(Sprite, OtherExpressionDimsAreLocalized) {
    SpriteIdentity id;
    SpriteExpression base;
    auto curve = base, brow = base, eye = base;
    curve.mouth_curve = 1;
    brow.brow_raise = 1;
    eye.eye_close = 1;
    const int side = 48;
    auto r0 = sprite_render(id, base, side).image;
    expect_changes_only_inside(r0, sprite_render(id, curve, side).image, to_pixels(kMouthRegion, side));
    expect_changes_only_inside(r0, sprite_render(id, brow, side).image, to_pixels(kBrowRegion, side));
    expect_changes_only_inside(r0, sprite_render(id, eye, side).image, to_pixels(kEyeRegion, side));
}

TEST(Sprite, InvalidParametersAreRangeErrors) {
    SpriteIdentity id;
    id.eye_spacing = 0.5;
    EXPECT_THROW(sprite_render(id, {}, 32), RangeError);
    SpriteExpression ex;
    ex.mouth_open = 1.5;
    EXPECT_THROW(sprite_render(SpriteIdentity{}, ex, 32), RangeError);
}

TEST(Sprite, EmbedAndExtractRoundTrip) {
    SpriteExpression ex{0.25, 0.5, 0.75, 1.0};
    auto a = embed(ex);
    EXPECT_EQ(a.size(), 46);
    auto back = extract(a);
    EXPECT_EQ(back.mouth_open, 0.25);
    EXPECT_EQ(back.eye_close, 1.0);
    for (int i = 4; i < 46; ++i) EXPECT_EQ(a[i], 0.0f);
    EXPECT_EQ(embed(SpriteExpression{}), AUVector::zeros());
}

TEST(Corpus, CountsMatchSpec) {
    auto c = generate_corpus({8, 16, 32, 3, 46, 0.0});
    EXPECT_EQ(c.target.size(), 128u);
    EXPECT_EQ(c.source.size(), 128u);
    EXPECT_EQ(c.neutral.size(), 8u);
    EXPECT_EQ(class_count(c), 8);
    EXPECT_GT(c.identity_floor, 0.0);
}

TEST(Corpus, SourceAndTargetIdentitiesAreDisjoint) {
    auto c = generate_corpus({4, 4, 16, 11, 8, 0.0});
    for (const auto& s : c.source)
        for (const auto& t : c.target) EXPECT_NE(s.identity, t.identity);
}

TEST(Corpus, SameSeedIsBitwiseIdentical) {
    CorpusSpec spec{3, 5, 16, 21, 8, 0.0};
    auto a = generate_corpus(spec), b = generate_corpus(spec);
    ASSERT_EQ(a.source.size(), b.source.size());
    for (std::size_t i = 0; i < a.source.size(); ++i) EXPECT_EQ(a.source[i].image, b.source[i].image);
    for (std::size_t i = 0; i < a.target.size(); ++i) EXPECT_EQ(a.target[i].image, b.target[i].image);
    EXPECT_EQ(a.identity_floor, b.identity_floor);
}

TEST(Corpus, MixFractionAddsTargetFrames) {
    auto c = generate_corpus({4, 5, 16, 2, 8, 0.25});
    EXPECT_EQ(c.source.size(), 20u + 5u);
}

TEST(Corpus, WrittenFilesReferenceNeutralTable) {
    auto c = generate_corpus({2, 2, 16, 4, 8, 0.0});
    auto dir = temp_dir("synth");
    auto f = write_corpus(c, dir);
    std::ifstream nt(f.neutral_table);
    int id = -1, rows = 0;
    std::string path;
    while (nt >> id >> path) {
        ++rows;
        EXPECT_TRUE(std::filesystem::exists(dir / path));
    }
    EXPECT_EQ(rows, 2);
    std::filesystem::remove_all(dir);
}

TEST(Oracle, DistanceBasics) {
    SpriteIdentity id;
    auto neutral = sprite_render(id, {}, 32).image;
    SpriteExpression open;
    open.mouth_open = 1;
    EXPECT_EQ(oracle_distance(neutral, neutral), 0.0);
    EXPECT_GT(oracle_distance(neutral, sprite_render(id, open, 32).image), 0.0);
}
