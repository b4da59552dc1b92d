#include <algorithm>
#include <filesystem>
#include <fstream>
#include <map>
#include <random>

#include "b3s/eval.hpp"
#include "doctest.h"
#include "json.hpp"

using namespace b3s;
using namespace b3s::eval;

namespace {

Tokens toks(const std::string& s) { return tokenize(s); }

// n-grams as token vectors, counted with a sorted map.
std::size_t brute_overlap(const Tokens& a, const Tokens& b, std::size_t n) {
  std::map<Tokens, std::size_t> ca, cb;
  for (std::size_t i = 0; i + n <= a.size(); ++i) ++ca[Tokens(a.begin() + i, a.begin() + i + n)];
  for (std::size_t i = 0; i + n <= b.size(); ++i) ++cb[Tokens(b.begin() + i, b.begin() + i + n)];
  std::size_t o = 0;
  for (const auto& [g, c] : ca)
    if (cb.count(g)) o += std::min(c, cb[g]);
  return o;
}

// Full-table LCS, written independently of the rolling-row version.
std::size_t brute_lcs(const Tokens& a, const Tokens& b) {
  std::vector<std::vector<std::size_t>> t(a.size() + 1, std::vector<std::size_t>(b.size() + 1, 0));
  for (std::size_t i = a.size(); i-- > 0;)
    for (std::size_t j = b.size(); j-- > 0;)
      t[i][j] = a[i] == b[j] ? 1 + t[i + 1][j + 1] : std::max(t[i + 1][j], t[i][j + 1]);
  return t[0][0];
}

double f1_of(std::size_t overlap, std::size_t ns, std::size_t nr) {
  const double p = ns ? double(overlap) / double(ns) : 0.0;
  const double r = nr ? double(overlap) / double(nr) : 0.0;
  return p + r > 0 ? 2 * p * r / (p + r) : 0.0;
}

Tokens random_tokens(std::mt19937_64& rng, std::size_t max_len, int alphabet) {
  std::uniform_int_distribution<std::size_t> len(0, max_len);
  std::uniform_int_distribution<int> sym(0, alphabet - 1);
  Tokens t(len(rng));
  for (auto& x : t) x = std::string(1, static_cast<char>('a' + sym(rng)));
  return t;
}

}  // namespace

TEST_CASE("rouge fixtures") {
  const auto same = rouge_n(toks("a b c"), toks("a b c"), 1);
  CHECK(same.precision == 1.0);
  CHECK(same.f1 == 1.0);
  const auto r1 = rouge_n(toks("a b d"), toks("a b c"), 1);
  CHECK(r1.precision == doctest::Approx(2.0 / 3.0).epsilon(1e-15));
  CHECK(r1.recall == doctest::Approx(2.0 / 3.0).epsilon(1e-15));
  CHECK(r1.f1 == doctest::Approx(2.0 / 3.0).epsilon(1e-15));
  const auto r2 = rouge_n(toks("a b c d"), toks("a b c"), 2);
  CHECK(r2.precision == doctest::Approx(2.0 / 3.0).epsilon(1e-15));
  CHECK(r2.recall == 1.0);
  CHECK(r2.f1 == doctest::Approx(0.8).epsilon(1e-15));
  const auto rl = rouge_l(toks("a c b d"), toks("a b c d"));
  CHECK(lcs_length(toks("a c b d"), toks("a b c d")) == 3);
  CHECK(rl.f1 == 0.75);
  CHECK(rouge_l(toks("a b"), toks("c d")).f1 == 0.0);
  CHECK(rouge_l(toks("x y z"), toks("x y z")).f1 == 1.0);
  CHECK(rouge_n({}, toks("a"), 1).f1 == 0.0);
  CHECK(rouge_n(toks("a"), toks("a"), 2).f1 == 0.0);
  CHECK_THROWS_AS(rouge_n(toks("a"), toks("a"), 0), std::invalid_argument);
}

TEST_CASE("rouge matches brute force counting") {
  std::mt19937_64 rng(17);
  for (int trial = 0; trial < 500; ++trial) {
    const Tokens s = random_tokens(rng, 12, 5), r = random_tokens(rng, 12, 5);
    for (std::size_t n = 1; n <= 3; ++n) {
      const std::size_t ns = s.size() >= n ? s.size() - n + 1 : 0, nr = r.size() >= n ? r.size() - n + 1 : 0;
      CHECK(rouge_n(s, r, n).f1 == f1_of(brute_overlap(s, r, n), ns, nr));
    }
    CHECK(rouge_l(s, r).f1 == f1_of(brute_lcs(s, r), s.size(), r.size()));
    // LCS symmetry
    CHECK(rouge_l(s, r).recall * double(r.size()) == doctest::Approx(rouge_l(r, s).recall * double(s.size())));
    // appending a matching token never lowers recall
    if (!r.empty()) {
      Tokens s2 = s;
      s2.push_back(r.back());
      CHECK(rouge_n(s2, r, 1).recall >= rouge_n(s, r, 1).recall);
    }
  }
}

TEST_CASE("pairwise alignment") {
  const Sentences ref = {toks("a b c"), toks("d e f"), toks("g h i")};
  CHECK(pairwise_align(ref, ref).pattern() == "123");
  CHECK(pairwise_align(ref, ref).mean_rouge_l == 1.0);
  const Sentences sys = {ref[1], ref[0], ref[2]};
  CHECK(pairwise_align(sys, ref).pattern() == "213");
  const Sentences empty = {Tokens{}, Tokens{}, Tokens{}};
  CHECK(pairwise_align(empty, ref).pattern() == "123");  // all ties
  CHECK(pairwise_align(empty, ref).mean_rouge_l == 0.0);
  std::vector<Tokens> two = {ref[0], ref[1]};
  CHECK_THROWS_AS(pairwise_align(two, ref), std::invalid_argument);

  SUBCASE("equals exhaustive search") {
    std::mt19937_64 rng(5);
    const std::vector<std::string> orders = {"123", "132", "213", "231", "312", "321"};
    for (int trial = 0; trial < 500; ++trial) {
      Sentences s, r;
      for (auto& x : s) x = random_tokens(rng, 6, 4);
      for (auto& x : r) x = random_tokens(rng, 6, 4);
      std::string best;
      double best_score = -1;
      std::array<double, 3> best_slots{};
      for (const auto& o : orders) {
        std::array<double, 3> slots;
        for (int k = 0; k < 3; ++k) slots[k] = f1_of(brute_lcs(s[k], r[o[k] - '1']), s[k].size(), r[o[k] - '1'].size());
        const double m = (slots[0] + slots[1] + slots[2]) / 3.0;
        if (m > best_score) {
          best_score = m;
          best = o;
          best_slots = slots;
        }
      }
      const auto a = pairwise_align(s, r);
      CHECK(a.pattern() == best);
      CHECK(a.mean_rouge_l == best_score);
      CHECK(a.slot_rouge_l == best_slots);
      const double identity = (rouge_l(s[0], r[0]).f1 + rouge_l(s[1], r[1]).f1 + rouge_l(s[2], r[2]).f1) / 3.0;
      CHECK(a.mean_rouge_l >= identity);
    }
  }
}

TEST_CASE("document scores and breakdown report") {
  const Sentences ref = {toks("a b c"), toks("d e f"), toks("g h i")};
  const Sentences sys = {toks("d e x"), toks("a b c"), toks("g h i")};
  const auto d = score_document(sys, ref);
  CHECK(d.alignment.pattern() == "213");
  CHECK(d.per_slot[1].r1 == 1.0);
  CHECK(d.per_slot[0].r1 == doctest::Approx(2.0 / 3.0));
  CHECK(d.per_slot[0].r2 == doctest::Approx(0.5));

  SUBCASE("single document fills every cell with its scores") {
    const DocumentResult one{"d1", Structure::Sequence, score_document(ref, ref)};
    const auto rep = breakdown_report(std::span(&one, 1));
    const auto& seq = rep.subsets.at("sequence");
    CHECK(seq.documents == 1);
    for (const auto& t : seq.position) {
      CHECK(t.r1 == 1.0);
      CHECK(t.rl == 1.0);
    }
    CHECK(seq.position_average.r2 == 1.0);
    CHECK(rep.subsets.at("parallel").documents == 0);
    CHECK(rep.patterns.size() == 6);
    CHECK(rep.patterns[0].pattern == "123");
    CHECK(rep.patterns[0].count == 1);
    CHECK(rep.patterns[0].percent == 100.0);
  }
  SUBCASE("pattern shares sum to one hundred") {
    std::mt19937_64 rng(8);
    std::vector<DocumentResult> docs;
    for (int i = 0; i < 37; ++i) {
      Sentences s, r;
      for (auto& x : s) x = random_tokens(rng, 6, 4);
      for (auto& x : r) x = random_tokens(rng, 6, 4);
      docs.push_back({"d" + std::to_string(i), i % 3 ? Structure::Parallel : Structure::Sequence, score_document(s, r)});
    }
    const auto rep = breakdown_report(docs);
    double total = 0;
    std::size_t count = 0;
    for (const auto& row : rep.patterns) {
      total += row.percent;
      count += row.count;
    }
    CHECK(total == doctest::Approx(100.0));
    CHECK(count == 37);
    CHECK(rep.subsets.at("all").documents == 37);
    CHECK(rep.subsets.at("parallel").documents + rep.subsets.at("sequence").documents == 37);
    auto j = nlohmann::json::parse(rep.to_json());
    CHECK(j["patterns"].size() == 6);
    CHECK(rep.to_tsv().find("321\t") != std::string::npos);
    CHECK(rep.to_text().find("ave") != std::string::npos);
  }
}

TEST_CASE("classification report") {
  using S = Structure;
  SUBCASE("perfect predictions") {
    const std::vector<S> g = {S::Parallel, S::Sequence, S::Parallel};
    const auto r = classification_report(g, g);
    CHECK(r.accuracy == 1.0);
    CHECK(r.parallel.f1 == 1.0);
    CHECK(r.sequence.precision == 1.0);
    CHECK(r.macro_f1 == 1.0);
  }
  SUBCASE("all parallel on balanced gold") {
    const std::vector<S> g = {S::Parallel, S::Sequence, S::Parallel, S::Sequence};
    const std::vector<S> p(4, S::Parallel);
    const auto r = classification_report(p, g);
    CHECK(r.parallel.recall == 1.0);
    CHECK(r.sequence.recall == 0.0);
    CHECK(r.accuracy == 0.5);
    CHECK(r.sequence.precision == 0.0);
  }
  SUBCASE("hand counted fixture") {
    // gold P P P P S S S ; pred P P S P S P S  -> TP_p 3, FN_p 1, FP_p 1, TP_s 2
    const std::vector<S> g = {S::Parallel, S::Parallel, S::Parallel, S::Parallel, S::Sequence, S::Sequence, S::Sequence};
    const std::vector<S> p = {S::Parallel, S::Parallel, S::Sequence, S::Parallel, S::Sequence, S::Parallel, S::Sequence};
    const auto r = classification_report(p, g);
    CHECK(r.confusion[0][0] == 3);
    CHECK(r.confusion[0][1] == 1);
    CHECK(r.confusion[1][0] == 1);
    CHECK(r.confusion[1][1] == 2);
    CHECK(r.parallel.precision == doctest::Approx(0.75));
    CHECK(r.parallel.recall == doctest::Approx(0.75));
    CHECK(r.sequence.precision == doctest::Approx(2.0 / 3.0));
    CHECK(r.sequence.recall == doctest::Approx(2.0 / 3.0));
    CHECK(r.accuracy == doctest::Approx(5.0 / 7.0));
    CHECK(r.parallel.support == 4);
  }
  CHECK_THROWS_AS(classification_report(std::vector<S>{S::Parallel}, std::vector<S>{}), std::invalid_argument);
}

TEST_CASE("annotation statistics") {
  SUBCASE("empty input") {
    const LabeledSplit dev{"dev", {}};
    const auto t = annotation_stats(std::span(&dev, 1));
    for (auto l : {StructureLabel::Parallel, StructureLabel::SequenceSegmented}) CHECK(t.total(l) == 0);
    CHECK(t.split_total(0) == 0);
  }
  SUBCASE("label file with fixed dev and test counts") {
    // dev / test counts per label: parallel, parallel_enum, sequence, sequence_seg
    const std::size_t table[4][2] = {{843, 755}, {72, 65}, {268, 275}, {12, 5}};
    const char* names[4] = {"parallel", "parallel_enum", "sequence", "sequence_seg"};
    std::vector<LabeledSplit> splits;
    for (int s = 0; s < 2; ++s) {
      const auto path =
          (std::filesystem::temp_directory_path() / ("b3s_annot_" + std::to_string(s) + ".jsonl")).string();
      {
        std::ofstream out(path);
        std::size_t id = 0;
        for (int l = 0; l < 4; ++l)
          for (std::size_t k = 0; k < table[l][s]; ++k)
            out << R"({"id":")" << s << '-' << id++ << R"(","article":"x","summary":["a","b","c"],"label":")"
                << names[l] << "\"}\n";
      }
      auto loaded = load_jsonl(path, true);
      splits.push_back(labeled_split(s == 0 ? "dev" : "test", loaded.pairs));
      std::filesystem::remove(path);
    }
    const auto t = annotation_stats(splits);
    CHECK(t.count(StructureLabel::Parallel, 0) == 843);
    CHECK(t.count(StructureLabel::Parallel, 1) == 755);
    CHECK(t.count(StructureLabel::ParallelEnumeration, 0) == 72);
    CHECK(t.count(StructureLabel::Sequence, 1) == 275);
    CHECK(t.count(StructureLabel::SequenceSegmented, 1) == 5);
    CHECK(t.total(StructureLabel::Parallel) == 1598);
    CHECK(t.total(StructureLabel::ParallelEnumeration) == 137);
    CHECK(t.total(StructureLabel::Sequence) == 543);
    CHECK(t.total(StructureLabel::SequenceSegmented) == 17);
    CHECK(t.split_total(0) + t.split_total(1) == 2295);
    CHECK(t.to_text().find("1598") != std::string::npos);
  }
  SUBCASE("unlabeled pair rejected") {
    NewsPair p;
    p.id = "u";
    CHECK_THROWS_AS(labeled_split("dev", {p}), std::invalid_argument);
  }
}
