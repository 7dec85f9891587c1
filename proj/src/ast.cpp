#include "efoent/ast.hpp"

#include <algorithm>
#include <cctype>
#include <functional>
#include <sstream>

#include "efoent/errors.hpp"

namespace efoent {

std::string Term::text() const {
  switch (kind) {
    case Kind::PlaceholderConstant: return "s" + std::to_string(index);
    case Kind::GroundedConstant: return "s:" + std::to_string(index);
    case Kind::Existential: return "e" + std::to_string(index);
    case Kind::Free: return "f";
  }
  return "?";
}

std::string RelRef::text() const {
  return grounded ? "r:" + std::to_string(index) : "r" + std::to_string(index);
}

namespace {

// ---------------------------------------------------------------------------
// Lexer shared by the parser and the tokenizer.

struct Lexeme {
  char punct = 0;       // one of ( ) & | ! , or 0 for a symbol
  std::string symbol;   // non-empty when punct == 0
  size_t pos = 0;
};

std::vector<Lexeme> lex(std::string_view text) {
  std::vector<Lexeme> out;
  size_t i = 0;
  while (i < text.size()) {
    char c = text[i];
    if (std::isspace(static_cast<unsigned char>(c))) {
      ++i;
      continue;
    }
    if (c == '(' || c == ')' || c == '&' || c == '|' || c == '!' || c == ',') {
      out.push_back({c, "", i});
      ++i;
      continue;
    }
    if (std::isalpha(static_cast<unsigned char>(c))) {
      size_t j = i + 1;
      if (j < text.size() && text[j] == ':') ++j;
      while (j < text.size() && std::isdigit(static_cast<unsigned char>(text[j]))) ++j;
      out.push_back({0, std::string(text.substr(i, j - i)), i});
      i = j;
      continue;
    }
    throw DataError("unexpected character '" + std::string(1, c) + "' at position " +
                    std::to_string(i));
  }
  return out;
}

int32_t parse_number(std::string_view s, std::string_view what) {
  if (s.empty()) throw DataError(std::string("missing number after ") + std::string(what));
  int64_t v = 0;
  for (char c : s) {
    if (!std::isdigit(static_cast<unsigned char>(c)))
      throw DataError("bad symbol suffix: " + std::string(s));
    v = v * 10 + (c - '0');
    if (v > INT32_MAX) throw DataError("symbol index too large");
  }
  return int32_t(v);
}

Term term_from_symbol(const std::string& s) {
  if (s == "f") return Term::free();
  char head = s[0];
  bool grounded = s.size() > 1 && s[1] == ':';
  std::string_view rest(s);
  rest.remove_prefix(grounded ? 2 : 1);
  if (head == 's') {
    int32_t n = parse_number(rest, s);
    return grounded ? Term::constant(n) : Term::placeholder(n);
  }
  if (head == 'e') {
    if (grounded) throw DataError("existential variables cannot be grounded: " + s);
    return Term::existential(parse_number(rest, s));
  }
  throw DataError("expected a term symbol, got '" + s + "'");
}

RelRef relation_from_symbol(const std::string& s) {
  if (s[0] != 'r') throw DataError("expected a relation symbol, got '" + s + "'");
  bool grounded = s.size() > 1 && s[1] == ':';
  std::string_view rest(s);
  rest.remove_prefix(grounded ? 2 : 1);
  int32_t n = parse_number(rest, s);
  return grounded ? RelRef::id(n) : RelRef::placeholder(n);
}

// ---------------------------------------------------------------------------
// Recursive-descent parser into a generic expression tree; the tree is then
// shaped into the QueryAst surface form.

struct Expr {
  enum Kind { EAtom, ENot, EAnd, EOr };
  Kind kind = EAtom;
  Atom atom;
  std::vector<Expr> kids;
};

class Parser {
 public:
  explicit Parser(std::string_view text) : lx_(lex(text)) {}

  Expr parse() {
    Expr e = disjunction();
    if (pos_ != lx_.size()) throw DataError("trailing input after query");
    return e;
  }

 private:
  bool at_punct(char c) const {
    return pos_ < lx_.size() && lx_[pos_].punct == c;
  }
  void expect(char c, const char* ctx) {
    if (!at_punct(c))
      throw DataError(std::string("expected '") + c + "' " + ctx);
    ++pos_;
  }
  const Lexeme& take() {
    if (pos_ >= lx_.size()) throw DataError("unexpected end of query");
    return lx_[pos_++];
  }

  Expr disjunction() {
    Expr first = conjunction();
    if (!at_punct('|')) return first;
    Expr out;
    out.kind = Expr::EOr;
    auto push = [&](Expr&& e) {
      if (e.kind == Expr::EOr)
        for (auto& k : e.kids) out.kids.push_back(std::move(k));
      else
        out.kids.push_back(std::move(e));
    };
    push(std::move(first));
    while (at_punct('|')) {
      ++pos_;
      push(conjunction());
    }
    return out;
  }

  Expr conjunction() {
    Expr first = unit();
    if (!at_punct('&')) return first;
    Expr out;
    out.kind = Expr::EAnd;
    auto push = [&](Expr&& e) {
      if (e.kind == Expr::EAnd)
        for (auto& k : e.kids) out.kids.push_back(std::move(k));
      else
        out.kids.push_back(std::move(e));
    };
    push(std::move(first));
    while (at_punct('&')) {
      ++pos_;
      push(unit());
    }
    return out;
  }

  Expr unit() {
    if (at_punct('!')) {
      ++pos_;
      expect('(', "after '!'");
      Expr inner = disjunction();
      expect(')', "closing negation");
      if (inner.kind != Expr::EAtom)
        throw DataError("negation must wrap a single atom");
      Expr out;
      out.kind = Expr::ENot;
      out.atom = inner.atom;
      return out;
    }
    if (at_punct('(')) {
      ++pos_;
      Expr inner = disjunction();
      expect(')', "closing group");
      return inner;
    }
    // Atom: rel '(' term ',' term ')'
    const Lexeme& rel = take();
    if (rel.punct != 0) throw DataError("expected an atom at position " + std::to_string(rel.pos));
    Expr out;
    out.kind = Expr::EAtom;
    out.atom.relation = relation_from_symbol(rel.symbol);
    expect('(', "opening atom arguments");
    const Lexeme& h = take();
    if (h.punct != 0) throw DataError("expected a head term");
    out.atom.head = term_from_symbol(h.symbol);
    expect(',', "between atom arguments");
    const Lexeme& t = take();
    if (t.punct != 0) throw DataError("expected a tail term");
    out.atom.tail = term_from_symbol(t.symbol);
    expect(')', "closing atom");
    return out;
  }

  std::vector<Lexeme> lx_;
  size_t pos_ = 0;
};

Atom literal_of(const Expr& e) {
  if (e.kind == Expr::EAtom) return e.atom;
  if (e.kind == Expr::ENot) {
    Atom a = e.atom;
    a.negated = true;
    return a;
  }
  throw DataError("disjunction nested inside a union branch is not supported");
}

std::vector<Atom> branch_of(const Expr& e) {
  if (e.kind == Expr::EAnd) {
    std::vector<Atom> atoms;
    atoms.reserve(e.kids.size());
    for (const auto& k : e.kids) atoms.push_back(literal_of(k));
    return atoms;
  }
  return {literal_of(e)};
}

Conjunction shape_conjunction(const Expr& e) {
  Conjunction c;
  const std::vector<Expr>* units;
  std::vector<Expr> single;
  if (e.kind == Expr::EAnd) {
    units = &e.kids;
  } else {
    single.push_back(e);
    units = &single;
  }
  for (const Expr& u : *units) {
    switch (u.kind) {
      case Expr::EAtom:
      case Expr::ENot:
        c.clauses.emplace_back(literal_of(u));
        break;
      case Expr::EOr: {
        UnionGroup g;
        for (const Expr& k : u.kids) g.branches.push_back(branch_of(k));
        c.clauses.emplace_back(std::move(g));
        break;
      }
      case Expr::EAnd:
        throw DataError("internal: unflattened conjunction");
    }
  }
  return c;
}

// ---------------------------------------------------------------------------
// Shared traversal helpers

template <class F>
void for_each_atom(QueryAst& ast, F&& fn) {
  for (auto& conj : ast.disjuncts)
    for (auto& clause : conj.clauses) {
      if (auto* a = std::get_if<Atom>(&clause)) {
        fn(*a);
      } else {
        for (auto& branch : std::get<UnionGroup>(clause).branches)
          for (auto& a2 : branch) fn(a2);
      }
    }
}

template <class F>
void for_each_atom(const QueryAst& ast, F&& fn) {
  for_each_atom(const_cast<QueryAst&>(ast), [&](Atom& a) { fn(const_cast<const Atom&>(a)); });
}

// Renames existentials to e1, e2, ... in surface first-use order and checks
// that the free variable occurs at least once.
void canonicalize(QueryAst& ast) {
  std::map<int32_t, int32_t> renames;
  bool has_free = false;
  for_each_atom(ast, [&](Atom& a) {
    for (Term* t : {&a.head, &a.tail}) {
      if (t->kind == Term::Kind::Free) has_free = true;
      if (t->kind != Term::Kind::Existential) continue;
      auto it = renames.find(t->index);
      if (it == renames.end())
        it = renames.emplace(t->index, int32_t(renames.size()) + 1).first;
      t->index = it->second;
    }
  });
  if (!has_free) throw DataError("query has no free variable");
  for (const auto& conj : ast.disjuncts) {
    if (conj.clauses.empty()) throw DataError("empty conjunction");
    for (const auto& clause : conj.clauses) {
      if (auto* g = std::get_if<UnionGroup>(&clause)) {
        if (g->branches.size() < 2) throw DataError("union needs at least two branches");
        for (const auto& b : g->branches)
          if (b.empty()) throw DataError("empty union branch");
      }
    }
  }
}

std::string atom_body(const Atom& a) {
  return a.relation.text() + "(" + a.head.text() + "," + a.tail.text() + ")";
}

std::string literal_text(const Atom& a) {
  if (a.negated) return "(!(" + atom_body(a) + "))";
  return "(" + atom_body(a) + ")";
}

std::string branch_text(const std::vector<Atom>& branch) {
  if (branch.size() == 1) return literal_text(branch[0]);
  std::string out = "(";
  for (size_t i = 0; i < branch.size(); ++i) {
    if (i) out += "&";
    out += literal_text(branch[i]);
  }
  return out + ")";
}

std::string clause_text(const Clause& c) {
  if (const auto* a = std::get_if<Atom>(&c)) return literal_text(*a);
  const auto& g = std::get<UnionGroup>(c);
  std::string out = "(";
  for (size_t i = 0; i < g.branches.size(); ++i) {
    if (i) out += "|";
    out += branch_text(g.branches[i]);
  }
  return out + ")";
}

std::string conjunction_text(const Conjunction& c, bool top_single) {
  if (c.clauses.size() == 1) {
    if (const auto* a = std::get_if<Atom>(&c.clauses[0])) {
      if (top_single) return a->negated ? "!(" + atom_body(*a) + ")" : atom_body(*a);
    }
    return clause_text(c.clauses[0]);
  }
  std::string out;
  for (size_t i = 0; i < c.clauses.size(); ++i) {
    if (i) out += "&";
    out += clause_text(c.clauses[i]);
  }
  return out;
}

}  // namespace

QueryAst parse_efo(std::string_view text) {
  Parser p(text);
  Expr tree = p.parse();
  QueryAst ast;
  if (tree.kind == Expr::EOr) {
    for (const Expr& d : tree.kids) ast.disjuncts.push_back(shape_conjunction(d));
  } else {
    ast.disjuncts.push_back(shape_conjunction(tree));
  }
  canonicalize(ast);
  return ast;
}

QueryAst canonicalized(QueryAst ast) {
  if (ast.disjuncts.empty()) throw DataError("empty query");
  canonicalize(ast);
  return ast;
}

std::string serialize_efo(const QueryAst& ast) {
  if (ast.disjuncts.empty()) throw DataError("empty query");
  if (ast.disjuncts.size() == 1) return conjunction_text(ast.disjuncts[0], true);
  std::string out;
  for (size_t i = 0; i < ast.disjuncts.size(); ++i) {
    if (i) out += "|";
    const Conjunction& c = ast.disjuncts[i];
    if (c.clauses.size() == 1)
      out += clause_text(c.clauses[0]);
    else
      out += "(" + conjunction_text(c, false) + ")";
  }
  return out;
}

std::vector<Token> tokenize(const QueryAst& ast) {
  std::string surface = serialize_efo(ast);
  std::vector<Token> out;
  int32_t atom_counter = 0;
  for (const Lexeme& lx : lex(surface)) {
    Token tok;
    if (lx.punct != 0) {
      if (lx.punct == ',') continue;  // commas are dropped
      switch (lx.punct) {
        case '(':
        case ')': tok.kind = TokenKind::Parenthesis; break;
        case '&': tok.kind = TokenKind::Conjunction; break;
        case '|': tok.kind = TokenKind::Disjunction; break;
        case '!': tok.kind = TokenKind::Negation; break;
        default: throw DataError("internal: bad punct");
      }
      tok.text = std::string(1, lx.punct);
      out.push_back(std::move(tok));
      continue;
    }
    tok.text = lx.symbol;
    if (lx.symbol[0] == 'r') {
      tok.kind = TokenKind::Relation;
      RelRef r = relation_from_symbol(lx.symbol);
      tok.symbol = r.grounded ? r.index : -1;
      tok.atom = atom_counter++;
    } else {
      tok.kind = TokenKind::Entity;
      Term t = term_from_symbol(lx.symbol);
      if (t.kind == Term::Kind::Free) {
        tok.is_free = true;
        tok.symbol = 0;
      } else if (t.kind == Term::Kind::Existential) {
        tok.symbol = t.index;
      } else {
        tok.symbol = t.kind == Term::Kind::GroundedConstant ? t.index : -1;
      }
    }
    out.push_back(std::move(tok));
  }
  return out;
}

QueryAst permute_atoms(const QueryAst& ast, const std::vector<std::vector<int>>& perms) {
  if (perms.size() != ast.disjuncts.size())
    throw DataError("permutation count does not match conjunction count");
  QueryAst out;
  for (size_t d = 0; d < ast.disjuncts.size(); ++d) {
    const auto& clauses = ast.disjuncts[d].clauses;
    const auto& perm = perms[d];
    if (perm.size() != clauses.size())
      throw DataError("permutation length does not match clause count");
    std::vector<bool> seen(perm.size(), false);
    Conjunction c;
    for (int src : perm) {
      if (src < 0 || size_t(src) >= clauses.size() || seen[size_t(src)])
        throw DataError("invalid permutation");
      seen[size_t(src)] = true;
      c.clauses.push_back(clauses[size_t(src)]);
    }
    out.disjuncts.push_back(std::move(c));
  }
  canonicalize(out);
  return out;
}

QueryAst reverse_permutation(const QueryAst& ast) {
  std::vector<std::vector<int>> perms;
  for (const auto& conj : ast.disjuncts) {
    std::vector<int> p(conj.clauses.size());
    for (size_t i = 0; i < p.size(); ++i) p[i] = int(conj.clauses.size() - 1 - i);
    perms.push_back(std::move(p));
  }
  return permute_atoms(ast, perms);
}

std::vector<int32_t> relation_placeholders(const QueryAst& ast) {
  std::vector<int32_t> out;
  for_each_atom(ast, [&](const Atom& a) {
    if (!a.relation.grounded &&
        std::find(out.begin(), out.end(), a.relation.index) == out.end())
      out.push_back(a.relation.index);
  });
  return out;
}

std::vector<int32_t> constant_placeholders(const QueryAst& ast) {
  std::vector<int32_t> out;
  for_each_atom(ast, [&](const Atom& a) {
    for (const Term* t : {&a.head, &a.tail})
      if (t->kind == Term::Kind::PlaceholderConstant &&
          std::find(out.begin(), out.end(), t->index) == out.end())
        out.push_back(t->index);
  });
  return out;
}

bool is_grounded(const QueryAst& ast) {
  bool ok = true;
  for_each_atom(ast, [&](const Atom& a) {
    if (!a.relation.grounded) ok = false;
    for (const Term* t : {&a.head, &a.tail})
      if (t->kind == Term::Kind::PlaceholderConstant) ok = false;
  });
  return ok;
}

QueryAst ground(const QueryAst& ast, const Grounding& g) {
  QueryAst out = ast;
  for_each_atom(out, [&](Atom& a) {
    if (!a.relation.grounded) {
      auto it = g.relations.find(a.relation.index);
      if (it == g.relations.end())
        throw DataError("ungrounded placeholder " + a.relation.text());
      a.relation = RelRef::id(it->second);
    }
    for (Term* t : {&a.head, &a.tail}) {
      if (t->kind == Term::Kind::PlaceholderConstant) {
        auto it = g.constants.find(t->index);
        if (it == g.constants.end())
          throw DataError("ungrounded placeholder " + t->text());
        *t = Term::constant(it->second);
      }
    }
  });
  return out;
}

std::vector<LiteralConjunction> dnf_expand(const QueryAst& ast) {
  std::vector<LiteralConjunction> out;
  for (const auto& conj : ast.disjuncts) {
    std::vector<std::vector<Atom>> partials{{}};
    for (const auto& clause : conj.clauses) {
      if (const auto* a = std::get_if<Atom>(&clause)) {
        for (auto& p : partials) p.push_back(*a);
      } else {
        const auto& g = std::get<UnionGroup>(clause);
        std::vector<std::vector<Atom>> next;
        next.reserve(partials.size() * g.branches.size());
        for (const auto& p : partials)
          for (const auto& branch : g.branches) {
            std::vector<Atom> q = p;
            q.insert(q.end(), branch.begin(), branch.end());
            next.push_back(std::move(q));
          }
        partials = std::move(next);
      }
    }
    for (auto& p : partials) out.push_back({std::move(p)});
  }
  return out;
}

std::vector<int32_t> existentials_of(const LiteralConjunction& c) {
  std::vector<int32_t> out;
  for (const Atom& a : c.atoms)
    for (const Term* t : {&a.head, &a.tail})
      if (t->kind == Term::Kind::Existential &&
          std::find(out.begin(), out.end(), t->index) == out.end())
        out.push_back(t->index);
  return out;
}

}  // namespace efoent
