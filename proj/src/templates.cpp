#include "efoent/templates.hpp"

#include <algorithm>
#include <unordered_map>

#include "efoent/errors.hpp"

namespace efoent {

namespace {

struct Row {
  int id;
  const char* name;
  bool mul, cyc, exi, neg;
  int depth;
  const char* formula;
};

// Seen types (trainable shapes).
constexpr Row kSeen[] = {
    {0, "1p", false, false, false, false, 1, "r1(s1,f)"},
    {1, "2p", false, false, false, false, 2, "(r1(s1,e1))&(r2(e1,f))"},
    {2, "3p", false, false, false, false, 3, "(r1(s1,e1))&(r2(e1,e2))&(r3(e2,f))"},
    {3, "2i", false, false, false, false, 1, "(r1(s1,f))&(r2(s2,f))"},
    {4, "3i", false, false, false, false, 1, "(r1(s1,f))&(r2(s2,f))&(r3(s3,f))"},
    {5, "ip", false, false, false, false, 2, "(r1(s1,e1))&(r2(s2,e1))&(r3(e1,f))"},
    {6, "pi", false, false, false, false, 2, "(r1(s1,e1))&(r2(e1,f))&(r3(s2,f))"},
    {7, "2in", false, false, false, true, 1, "(r1(s1,f))&(!(r2(s2,f)))"},
    {8, "3in", false, false, false, true, 1, "(r1(s1,f))&(r2(s2,f))&(!(r3(s3,f)))"},
    {9, "inp", false, false, false, true, 2, "(r1(s1,e1))&(!(r2(s2,e1)))&(r3(e1,f))"},
    {10, "pin", false, false, false, true, 2, "(r1(s1,e1))&(r2(e1,f))&(!(r3(s2,f)))"},
    {11, "pni", false, false, false, true, 2, "(r1(s1,e1))&(!(r2(e1,f)))&(r3(s2,f))"},
    {12, "2u", false, false, false, false, 1, "(r1(s1,f))|(r2(s2,f))"},
    {13, "up", false, false, false, false, 2, "((r1(s1,e1))|(r2(s2,e1)))&(r3(e1,f))"},
    {14, "2m", true, false, false, false, 2, "(r1(s1,e1))&(r2(e1,f))&(r3(e1,f))"},
    {15, "2nm", true, false, false, true, 2, "(r1(s1,e1))&(r2(e1,f))&(!(r3(e1,f)))"},
    {16, "3mp", true, false, false, false, 3, "(r1(s1,e1))&(r2(e1,e2))&(r3(e2,f))&(r4(e1,e2))"},
    {17, "3pm", true, false, false, false, 3, "(r1(s1,e1))&(r2(e1,e2))&(r3(e2,f))&(r4(e2,f))"},
    {18, "im", true, false, false, false, 2, "(r1(s1,e1))&(r2(s2,e1))&(r3(e1,f))&(r4(e1,f))"},
    {19, "2il", false, false, true, false, 1, "(r1(s1,f))&(r2(e1,f))"},
    {20, "3il", false, false, true, false, 1, "(r1(s1,f))&(r2(s2,f))&(r3(e1,f))"},
    {21, "3c", false, true, false, false, 3,
     "(r1(s1,e1))&(r2(e1,f))&(r3(s2,e2))&(r4(e2,f))&(r5(e1,e2))"},
    {22, "3cm", true, true, false, false, 3,
     "(r1(s1,e1))&(r2(e1,f))&(r3(s2,e2))&(r4(e2,f))&(r5(e1,e2))&(r6(e1,f))"},
};

// Unseen types (evaluation-only shapes).
constexpr Row kUnseen[] = {
    {23, "2pi", false, false, false, false, 2,
     "(r1(s1,e1))&(r2(e1,f))&(r3(s2,e2))&(r4(e2,f))"},
    {24, "2pu", false, false, false, false, 2,
     "((r1(s1,e1))&(r3(e1,f)))|((r2(s2,e2))&(r4(e2,f)))"},
    {25, "ui", false, false, false, false, 2,
     "((r1(s1,e1))|(r2(s2,e1)))&(r3(e1,f))&(r4(s3,f))"},
    {26, "iu", false, false, false, false, 2,
     "((r1(s1,e1))&(r2(s2,e1))&(r3(e1,f)))|(r4(s3,f))"},
    {27, "upi", false, false, false, false, 2,
     "((r1(s1,e1))|(r2(s2,e1)))&(r3(e1,f))&(r4(s3,e2))&(r5(e2,f))"},
    {28, "ipu", false, false, false, false, 2,
     "((r1(s1,e1))&(r2(s2,e1))&(r3(e1,f)))|((r4(s3,e2))&(r5(e2,f)))"},
    {29, "i2p", false, false, false, false, 3,
     "(r1(s1,e1))&(r2(s2,e1))&(r3(e1,e2))&(r4(e2,f))"},
    {30, "u2p", false, false, false, false, 3,
     "((r1(s1,e1))|(r2(s2,e1)))&(r3(e1,e2))&(r4(e2,f))"},
    {31, "2pin", false, false, false, true, 2,
     "(r1(s1,e1))&(r2(e1,f))&(r3(s2,e2))&(r4(e2,f))&(!(r5(s3,f)))"},
    {32, "2pni", false, false, false, true, 2,
     "(r1(s1,e1))&(r2(e1,f))&(r3(s2,e2))&(!(r4(e2,f)))"},
    {33, "pn3i", false, false, false, true, 2,
     "(r1(s1,e1))&(!(r2(e1,f)))&(r3(s2,f))&(r4(s3,f))"},
    {34, "in2p", false, false, false, true, 3,
     "(r1(s1,e1))&(!(r2(s2,e1)))&(r3(e1,e2))&(r4(e2,f))"},
    {35, "inu", false, false, false, true, 2,
     "((r1(s1,e1))&(!(r2(s2,e1)))&(r3(e1,f)))|(r4(s3,f))"},
    {36, "inpu", false, false, false, true, 2,
     "((r1(s1,e1))&(!(r2(s2,e1)))&(r3(e1,f)))|((r4(s3,e2))&(r5(e2,f)))"},
    {37, "upni", false, false, false, true, 2,
     "((r1(s1,e1))|(r2(s2,e1)))&(r3(e1,f))&(r4(s3,e2))&(!(r5(e2,f)))"},
    {38, "unpi", false, false, false, true, 2,
     "((r1(s1,e1))|(r2(s2,e1)))&(!(r3(e1,f)))&(r4(s3,e2))&(r5(e2,f))"},
    {39, "imp", true, false, false, false, 3,
     "(r1(s1,e1))&(r2(s2,e1))&(r3(e1,e2))&(r4(e2,f))&(r5(e1,e2))"},
    {40, "ipm", true, false, false, false, 3,
     "(r1(s1,e1))&(r2(s2,e1))&(r3(e1,e2))&(r4(e2,f))&(r5(e2,f))"},
    {41, "3im", true, false, false, false, 2,
     "(r1(s1,e1))&(r2(s2,e1))&(r3(s3,e1))&(r4(e1,f))&(r5(e1,f))"},
    {42, "pil", false, false, true, false, 2, "(r1(s1,e1))&(r2(e1,f))&(r3(e2,f))"},
    {43, "ilp", false, false, true, false, 2, "(r1(s1,e1))&(r2(e2,e1))&(r3(e1,f))"},
    {44, "p3il", false, false, true, false, 2,
     "(r1(s1,e1))&(r2(e1,f))&(r3(s2,e2))&(r4(e2,f))&(r5(e3,f))"},
    {45, "i3c", false, true, false, false, 3,
     "(r1(s1,e1))&(r2(s2,e1))&(r3(e1,f))&(r4(s3,e2))&(r5(e2,f))&(r6(e1,e2))"},
    {46, "i3cm", true, true, false, false, 3,
     "(r1(s1,e1))&(r2(s2,e1))&(r3(e1,f))&(r4(s3,e2))&(r5(e2,f))&(r6(e1,e2))&(r7(e1,f))"},
    {47, "3inl", false, false, true, true, 1, "(r1(s1,f))&(!(r2(s2,f)))&(r3(e1,f))"},
    {48, "pinl", false, false, true, true, 2,
     "(r1(s1,e1))&(r2(e1,f))&(!(r3(s2,f)))&(r4(e2,f))"},
    {49, "inm", true, false, false, true, 2,
     "(r1(s1,e1))&(!(r2(s2,e1)))&(r3(e1,f))&(r4(e1,f))"},
    {50, "inmp", true, false, false, true, 3,
     "(r1(s1,e1))&(!(r2(s2,e1)))&(r3(e1,e2))&(r4(e2,f))&(r5(e1,e2))"},
    {51, "inpm", true, false, false, true, 3,
     "(r1(s1,e1))&(!(r2(s2,e1)))&(r3(e1,f))&(r4(e2,f))&(r5(e2,f))"},
    {52, "3nmp", true, false, false, true, 3,
     "(r1(s1,e1))&(r2(e1,e2))&(r3(e2,f))&(!(r4(e1,e2)))"},
    {53, "3cn", false, true, false, true, 3,
     "(r1(s1,e1))&(r2(e1,f))&(r3(s2,e2))&(!(r4(e2,f)))&(r5(e1,e2))"},
    {54, "3cnm", true, true, false, true, 3,
     "(r1(s1,e1))&(r2(e1,f))&(r3(s2,e2))&(r4(e2,f))&(r5(e1,e2))&(!(r6(e1,f)))"},
};

std::vector<QueryType> build_registry() {
  std::vector<QueryType> out;
  out.reserve(55);
  auto add = [&](const Row& r, bool seen) {
    QueryType t;
    t.id = r.id;
    t.name = r.name;
    t.multi_edge = r.mul;
    t.cyclic = r.cyc;
    t.existential_leaf = r.exi;
    t.negation = r.neg;
    t.depth = r.depth;
    t.formula = r.formula;
    t.seen = seen;
    t.ast = parse_efo(r.formula);
    out.push_back(std::move(t));
  };
  for (const Row& r : kSeen) add(r, true);
  for (const Row& r : kUnseen) add(r, false);
  return out;
}

}  // namespace

const std::vector<QueryType>& query_types() {
  static const std::vector<QueryType> registry = build_registry();
  return registry;
}

const QueryType* find_query_type(const std::string& name) {
  static const std::unordered_map<std::string, size_t> index = [] {
    std::unordered_map<std::string, size_t> m;
    const auto& reg = query_types();
    for (size_t i = 0; i < reg.size(); ++i) m.emplace(reg[i].name, i);
    return m;
  }();
  auto it = index.find(name);
  if (it == index.end()) return nullptr;
  return &query_types()[it->second];
}

const QueryType& query_type(const std::string& name) {
  const QueryType* t = find_query_type(name);
  if (!t) throw DataError("unknown query type: " + name);
  return *t;
}

const std::vector<LispForm>& lisp_forms() {
  static const std::vector<LispForm> forms = {
      {"1p", "r1(s1,f)", "(p,(r1),(s1))"},
      {"2p", "(r1(s1,e1))&(r2(e1,f))", "(p,(r2),(p,(r1),(s1)))"},
      {"3p", "(r1(s1,e1))&(r2(e1,e2))&(r3(e2,f))", "(p,(r3),(p,(r2),(p,(r1),(s1))))"},
      {"2i", "(r1(s1,f))&(r2(s2,f))", "(i,(p,(r1),(s1)),(p,(r2),(s2)))"},
      {"3i", "(r1(s1,f))&(r2(s2,f))&(r3(s3,f))",
       "(i,(p,(r1),(s1)),(p,(r2),(s2)),(p,(r3),(s3)))"},
      {"ip", "(r1(s1,e1))&(r2(s2,e1))&(r3(e1,f))",
       "(p,(r3),(i,(p,(r1),(s1)),(p,(r2),(s2))))"},
      {"pi", "(r1(s1,e1))&(r2(e1,f))&(r3(s2,f))",
       "(i,(p,(r2),(p,(r1),(s1))),(p,(r3),(s2)))"},
      {"2in", "(r1(s1,f))&(!(r2(s2,f)))", "(i,(p,(r1),(s1)),(n,(p,(r2),(s2))))"},
      {"3in", "(r1(s1,f))&(r2(s2,f))&(!(r3(s3,f)))",
       "(i,(p,(r1),(s1)),(p,(r2),(s2)),(n,(p,(r3),(s3))))"},
      {"inp", "(r1(s1,e1))&(!(r2(s2,e1)))&(r3(e1,f))",
       "(p,(r3),(i,(p,(r1),(s1)),(n,(p,(r2),(s2)))))"},
      {"pin", "(r1(s1,e1))&(r2(e1,f))&(!(r3(s2,f)))",
       "(i,(p,(r2),(p,(r1),(s1))),(n,(p,(r3),(s2))))"},
      {"2u", "(r1(s1,f))|(r2(s2,f))", "(u,(p,(r1),(s1)),(p,(r2),(s2)))"},
      {"up", "((r1(s1,e1))|(r2(s2,e1)))&(r3(e1,f))",
       "(p,(r3),(u,(p,(r1),(s1)),(p,(r2),(s2))))"},
      {"2pi", "(r1(s1,e1))&(r2(e1,f))&(r3(s2,e2))&(r4(e2,f))",
       "(i,(p,(r2),(p,(r1),(s1))),(p,(r4),(p,(r3),(s2))))"},
      {"2pu", "((r1(s1,e1))&(r3(e1,f)))|((r2(s2,e2))&(r4(e2,f)))",
       "(u,(p,(r3),(p,(r1),(s1))),(p,(r4),(p,(r2),(s2))))"},
      {"ui", "((r1(s1,e1))|(r2(s2,e1)))&(r3(e1,f))&(r4(s3,f))",
       "(i,(p,(r4),(s3)),(p,(r3),(u,(p,(r1),(s1)),(p,(r2),(s2)))))"},
      {"iu", "((r1(s1,e1))&(r2(s2,e1))&(r3(e1,f)))|(r4(s3,f))",
       "(u,(p,(r4),(s3)),(p,(r3),(i,(p,(r1),(s1)),(p,(r2),(s2)))))"},
      {"upi", "((r1(s1,e1))|(r2(s2,e1)))&(r3(e1,f))&(r4(s3,e2))&(r5(e2,f))",
       "(i,(p,(r5),(p,(r4),(s3))),(p,(r3),(u,(p,(r1),(s1)),(p,(r2),(s2)))))"},
      {"ipu", "((r1(s1,e1))&(r2(s2,e1))&(r3(e1,f)))|((r4(s3,e2))&(r5(e2,f)))",
       "(u,(p,(r5),(p,(r4),(s3))),(p,(r3),(i,(p,(r1),(s1)),(p,(r2),(s2)))))"},
      {"i2p", "(r1(s1,e1))&(r2(s2,e1))&(r3(e1,e2))&(r4(e2,f))",
       "(p,(r4),(p,(r3),(i,(p,(r1),(s1)),(p,(r2),(s2)))))"},
      {"u2p", "((r1(s1,e1))|(r2(s2,e1)))&(r3(e1,e2))&(r4(e2,f))",
       "(p,(r4),(p,(r3),(u,(p,(r1),(s1)),(p,(r2),(s2)))))"},
      {"2pin", "(r1(s1,e1))&(r2(e1,f))&(r3(s2,e2))&(r4(e2,f))&(!(r5(s3,f)))",
       "(i,(i,(p,(r4),(p,(r3),(s2))),(p,(r2),(p,(r1),(s1)))),(n,(p,(r5),(s3))))"},
      {"in2p", "(r1(s1,e1))&(!(r2(s2,e1)))&(r3(e1,e2))&(r4(e2,f))",
       "(p,(r4),(p,(r3),(i,(p,(r1),(s1)),(n,(p,(r2),(s2))))))"},
      {"inu", "((r1(s1,e1))&(!(r2(s2,e1)))&(r3(e1,f)))|(r4(s3,f))",
       "(u,(p,(r4),(s3)),(p,(r3),(i,(p,(r1),(s1)),(n,(p,(r2),(s2))))))"},
      {"inpu", "((r1(s1,e1))&(!(r2(s2,e1)))&(r3(e1,f)))|((r4(s3,e2))&(r5(e2,f)))",
       "(u,(p,(r5),(p,(r4),(s3))),(p,(r3),(i,(p,(r1),(s1)),(n,(p,(r2),(s2))))))"},
  };
  return forms;
}

const std::vector<ReversionCase>& reversion_cases() {
  static const std::vector<ReversionCase> cases = {
      {"2p", "(r1(s1,e1))&(r2(e1,f))", "(r2(e1,f))&(r1(s1,e1))"},
      {"3p", "((r1(s1,e1))&(r2(e1,e2)))&(r3(e2,f))",
       "((r3(e2,f))&(r2(e1,e2)))&(r1(s1,e1))"},
      {"ip", "((r1(s1,e1))&(r2(s2,e1)))&(r3(e1,f))",
       "((r3(e1,f))&(r2(s2,e1)))&(r1(s1,e1))"},
      {"pi", "((r1(s1,e1))&(r2(e1,f)))&(r3(s2,f))",
       "((r3(s2,f))&(r2(e1,f)))&(r1(s1,e1))"},
      {"2in", "(r1(s1,f))&(!(r2(s2,f)))", "(!(r2(s2,f)))&(r1(s1,f))"},
  };
  return cases;
}

int max_template_tokens() {
  static const int value = [] {
    int best = 0;
    for (const QueryType& t : query_types())
      best = std::max(best, int(tokenize(t.ast).size()));
    return best;
  }();
  return value;
}

int max_template_existentials() {
  static const int value = [] {
    int best = 0;
    for (const QueryType& t : query_types())
      for (const LiteralConjunction& c : dnf_expand(t.ast))
        for (int32_t e : existentials_of(c)) best = std::max(best, int(e));
    return best;
  }();
  return value;
}

}  // namespace efoent
