#pragma once

#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace mmpt {

// Errors raised by the fragment grammar. All inherit from FragmentError so
// callers that only care about accept/reject can catch one type.
struct FragmentError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct LexError : FragmentError {
  using FragmentError::FragmentError;
};
struct SyntaxError : FragmentError {
  using FragmentError::FragmentError;
};
struct ValenceError : FragmentError {
  using FragmentError::FragmentError;
};
struct DisconnectedError : FragmentError {
  using FragmentError::FragmentError;
};

enum class BondOrder : uint8_t { Single = 1, Double = 2, Triple = 3, Aromatic = 4 };

struct Atom {
  // Element symbol in canonical (uppercase) form: B C N O P S F Cl Br I,
  // or "*" for an attachment-point wildcard.
  std::string element;
  bool aromatic = false;
  int charge = 0;
  // Bracket atoms carry an explicit hydrogen count; bare atoms leave it unset
  // and hydrogens are implied by the valence model.
  std::optional<int> hcount;
  // Attachment map number for wildcards ([*:n]); 0 for real atoms.
  int attachment = 0;

  bool is_wildcard() const { return element == "*"; }
};

struct Bond {
  int a = 0;
  int b = 0;
  BondOrder order = BondOrder::Single;
};

/// Immutable molecular graph of a variable or constant fragment.
///
/// Construction goes through parse_fragment() or from_graph(); both compute
/// the canonical string eagerly, so Fragment values are safe to share across
/// threads without synchronization.
class Fragment {
 public:
  Fragment() = default;

  // Builds a fragment from an explicit graph. When `validate` is set the full
  // invariant set (valence bounds, wildcard degree, connectivity, attachment
  // numbering) is enforced; internal algorithms (e.g. common-subgraph
  // extraction) may construct partial graphs with validation off.
  static Fragment from_graph(std::vector<Atom> atoms, std::vector<Bond> bonds,
                             bool validate = true);

  const std::vector<Atom>& atoms() const { return atoms_; }
  const std::vector<Bond>& bonds() const { return bonds_; }
  const std::string& canonical() const { return canonical_; }

  int attachment_count() const;
  int heavy_atom_count() const;  // atoms excluding wildcards
  bool empty() const { return atoms_.empty(); }

  // Neighbor list as (atom index, bond order) pairs.
  std::vector<std::pair<int, BondOrder>> neighbors(int atom) const;
  int degree(int atom) const;

  // Total hydrogen count of one atom: the bracket-specified count when
  // present, otherwise the implicit count from the valence model.
  int total_hydrogens(int atom) const;

  // Sum of standard atomic weights over heavy atoms plus hydrogens.
  double molecular_weight() const;

  bool operator==(const Fragment& other) const { return canonical_ == other.canonical_; }
  bool operator!=(const Fragment& other) const { return !(*this == other); }

 private:
  std::vector<Atom> atoms_;
  std::vector<Bond> bonds_;
  std::string canonical_;

  friend Fragment parse_fragment(std::string_view text);
};

/// Parses a fragment string.
///
/// Grammar: elements {B,C,N,O,P,S,F,Cl,Br,I}, aromatic lowercase
/// {b,c,n,o,p,s}, bond symbols {-,=,#,:}, branches "()", ring closures 1-9
/// and %nn, bracket atoms "[<elem><charge><Hn>]", wildcards "[*:n]".
///
/// Throws LexError, SyntaxError, ValenceError or DisconnectedError; never
/// crashes or loops on arbitrary input.
Fragment parse_fragment(std::string_view text);

/// Non-throwing variant; returns nullopt on any rejection.
std::optional<Fragment> try_parse(std::string_view text) noexcept;

/// Canonical string of a fragment. Isomorphic fragments (same graph up to
/// atom relabeling, matching attachment numbers) map to the identical string.
std::string canonicalize(const Fragment& f);

using TokenSequence = std::vector<std::string>;

/// Splits a fragment string into grammar tokens. Concatenating the returned
/// surface forms reproduces the input exactly. Throws LexError.
TokenSequence tokenize(std::string_view text);

std::string detokenize(const TokenSequence& tokens);

int attachment_count(const Fragment& f);

/// One token of the canonical string together with the graph objects it
/// stands for: atom tokens carry (atom, -1); bond symbols, ring-closure
/// digits and branch parentheses carry both endpoint atom indices.
struct EmittedToken {
  std::string text;
  int atom = -1;
  int atom2 = -1;
};

/// Canonical token stream of `f`; concatenating the texts yields
/// f.canonical(). Used to project graph-level masks onto token positions.
std::vector<EmittedToken> canonical_emission(const Fragment& f);

/// Joins a variable into its constant context: wildcards with matching
/// attachment numbers are removed and their neighbors bonded (single order).
/// `constant_pieces` holds one connected piece per attachment point.
Fragment substitute(const std::vector<Fragment>& constant_pieces, const Fragment& variable);

// Valence bound of an element adjusted by formal charge (negative results
// clamp to zero). Returns -1 for unknown symbols.
int valence_bound(const std::string& element, int charge);

double atomic_weight(const std::string& element);

}  // namespace mmpt
