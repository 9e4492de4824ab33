#include <cmath>
#include <fstream>
#include <set>

#include "doctest.h"
#include "surgtag/embedding.hpp"
#include "surgtag/errors.hpp"
#include "surgtag/vocabulary.hpp"
#include "test_support.hpp"

using namespace surgtag;
using namespace surgtag::testing;

namespace {

double norm(const std::vector<float>& v) {
  double s = 0.0;
  for (float x : v) s += static_cast<double>(x) * x;
  return std::sqrt(s);
}

std::vector<std::string> fixture_tags() {
  std::ifstream in(std::string(SURGTAG_FIXTURES) + "/tag_list.txt");
  std::vector<std::string> tags;
  for (std::string line; std::getline(in, line);) {
    if (!line.empty()) tags.push_back(line);
  }
  return tags;
}

}  // namespace

TEST_CASE("normalize_tag: case, trim, whitespace runs, idempotence") {
  CHECK(normalize_tag("  Common   Bile\tDuct ") == "common bile duct");
  CHECK(normalize_tag("") == "");
  CHECK(normalize_tag(" \t ") == "");
  for (const auto& t : fixture_tags()) CHECK(normalize_tag(normalize_tag(t)) == normalize_tag(t));
}

TEST_CASE("embed: normalization, unit norm, empty names") {
  TagEmbeddingTable table;
  CHECK(table.dim() == 64);
  CHECK(table.provider() == ProviderId::hashed);
  CHECK(table.embed("Grasper") == table.embed("  grasper "));
  for (const auto& t : fixture_tags()) CHECK(std::abs(norm(table.embed(t)) - 1.0) < 1e-6);
  for (const char* t : {"a", "x y", "~", "aaaaaaaaaaaaaaaaaaaaaaaaaaaa"}) CHECK(std::abs(norm(table.embed(t)) - 1.0) < 1e-6);
  CHECK_THROWS_AS(table.embed(""), ValidationError);
  CHECK_THROWS_AS(table.embed("   "), ValidationError);
}

TEST_CASE("embed: shared trigrams raise similarity") {
  TagEmbeddingTable table;
  const double near = cosine_similarity(table.embed("grasper"), table.embed("graspers"));
  const double far = cosine_similarity(table.embed("grasper"), table.embed("suction"));
  CHECK(near > far);
  CHECK(near > 0.5);
}

TEST_CASE("embed: injective on the fixture tag list") {
  TagEmbeddingTable table;
  auto tags = fixture_tags();
  REQUIRE(tags.size() >= 100);
  std::set<std::vector<float>> seen;
  for (const auto& t : tags) seen.insert(table.embed(t));
  CHECK(seen.size() == tags.size());
}

TEST_CASE("embedding table: load, save round trip, fallback") {
  auto dir = scratch_dir("embedding");
  {
    std::ofstream(dir / "empty.tsv") << "#dim=8\n";
  }
  TagEmbeddingTable empty = TagEmbeddingTable::load(dir / "empty.tsv");
  CHECK(empty.dim() == 8);
  CHECK(empty.entries().empty());
  CHECK(empty.provider() == ProviderId::file);

  TagEmbeddingTable table(8);
  table.set("Liver", {3, 0, 0, 4, 0, 0, 0, 0});
  table.set("hook", {1, 1, 1, 1, 1, 1, 1, 1});
  CHECK(table.provider() == ProviderId::file);
  CHECK(table.embed("liver")[0] == doctest::Approx(0.6));
  table.save(dir / "t.tsv");
  TagEmbeddingTable back = TagEmbeddingTable::load(dir / "t.tsv");
  CHECK(back.entries() == table.entries());
  back.save(dir / "t2.tsv");
  std::ifstream a(dir / "t.tsv"), b(dir / "t2.tsv");
  std::string sa((std::istreambuf_iterator<char>(a)), {}), sb((std::istreambuf_iterator<char>(b)), {});
  CHECK(sa == sb);

  CHECK(back.embed("gallbladder") == hashed_embedding("gallbladder", 8));
}

TEST_CASE("embedding table: format errors carry the line number") {
  auto dir = scratch_dir("embedding_bad");
  {
    std::ofstream(dir / "bad.tsv") << "#dim=3\nliver\t1,0,0\nhook\t1,0\n";
  }
  try {
    TagEmbeddingTable::load(dir / "bad.tsv");
    FAIL("expected FormatError");
  } catch (const FormatError& e) {
    CHECK(std::string(e.what()).find(":3:") != std::string::npos);
  }
  {
    std::ofstream(dir / "nohdr.tsv") << "liver\t1,0,0\n";
  }
  CHECK_THROWS_AS(TagEmbeddingTable::load(dir / "nohdr.tsv"), FormatError);
  CHECK_THROWS_AS(TagEmbeddingTable::load(dir / "missing.tsv"), IoError);
}

TEST_CASE("vocabulary: uniqueness, order, TSV round trip") {
  TagVocabulary v;
  CHECK(v.add({"Grasper", TagCategory::instrument, TagSplit::pretrain}) == 0);
  CHECK(v.add({"gallbladder", TagCategory::organ, TagSplit::both}) == 1);
  CHECK_THROWS_AS(v.add({" GRASPER ", TagCategory::instrument, TagSplit::both}), ValidationError);
  CHECK_THROWS_AS(v.add({"  ", TagCategory::other, TagSplit::both}), ValidationError);
  CHECK(v.find("grasper") == std::optional<std::size_t>(0));
  CHECK_FALSE(v.contains("hook"));
  CHECK(v.names() == std::vector<std::string>{"grasper", "gallbladder"});

  auto dir = scratch_dir("vocab");
  v.write_tsv(dir / "v.tsv");
  TagVocabulary back = TagVocabulary::read_tsv(dir / "v.tsv");
  CHECK(back == v);
  CHECK(back.to_tsv() == v.to_tsv());

  for (auto c : {TagCategory::instrument, TagCategory::verb, TagCategory::target, TagCategory::organ, TagCategory::phase,
                 TagCategory::procedure, TagCategory::other}) {
    CHECK(category_from_string(to_string(c)) == c);
  }
  for (auto s : {TagSplit::pretrain, TagSplit::finetune, TagSplit::both}) CHECK(split_from_string(to_string(s)) == s);
  CHECK_THROWS_AS(category_from_string("tool"), ValidationError);
}
