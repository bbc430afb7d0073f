//! Product catalog and the rule-based explicit product matcher.
//!
//! The matcher is a gazetteer: every alias is normalized, split into tokens,
//! and matched at token boundaries of the normalized query. At each position
//! the longest alias wins; identical aliases registered for several products
//! resolve to the first product in catalog order. No fuzzy matching is done,
//! so a query that never names a product yields no matches.

use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use unicode_normalization::UnicodeNormalization;

use crate::io;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Product {
    pub id: String,
    pub display_name: String,
    pub aliases: Vec<String>,
}

/// On-disk layout of a catalog file.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CatalogFile {
    pub products: Vec<Product>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NerMatch {
    pub product_id: String,
    /// Character offsets `[start, end)` into the normalized query.
    pub span: (usize, usize),
    pub matched_alias: String,
}

#[derive(Debug, Clone)]
struct AliasEntry {
    tokens: Vec<String>,
    alias: String,
    char_len: usize,
    product: usize,
}

#[derive(Debug, Clone)]
pub struct Catalog {
    products: Vec<Product>,
    label_index: HashMap<String, usize>,
    /// Keyed by the first alias token; each list is sorted longest first,
    /// then by catalog order.
    gazetteer: HashMap<String, Vec<AliasEntry>>,
}

/// Lowercase, NFC, punctuation to spaces, whitespace collapsed and trimmed.
pub fn normalize(text: &str) -> String {
    let mapped: String = text
        .nfc()
        .flat_map(char::to_lowercase)
        .map(|c| if c.is_alphanumeric() { c } else { ' ' })
        .collect();
    let mut out = String::with_capacity(mapped.len());
    for tok in mapped.split_whitespace() {
        if !out.is_empty() {
            out.push(' ');
        }
        out.push_str(tok);
    }
    out.nfc().collect()
}

impl Catalog {
    pub fn new(products: Vec<Product>) -> Result<Self> {
        let mut label_index = HashMap::with_capacity(products.len());
        let mut gazetteer: HashMap<String, Vec<AliasEntry>> = HashMap::new();
        for (pos, p) in products.iter().enumerate() {
            if p.id.is_empty() {
                return Err(Error::EmptyProductId);
            }
            if label_index.insert(p.id.clone(), pos).is_some() {
                return Err(Error::DuplicateProductId(p.id.clone()));
            }
            for alias in &p.aliases {
                let norm = normalize(alias);
                if norm.is_empty() {
                    return Err(Error::EmptyAlias { product: p.id.clone() });
                }
                let tokens: Vec<String> = norm.split(' ').map(String::from).collect();
                gazetteer.entry(tokens[0].clone()).or_default().push(AliasEntry {
                    char_len: norm.chars().count(),
                    tokens,
                    alias: norm,
                    product: pos,
                });
            }
        }
        for entries in gazetteer.values_mut() {
            entries.sort_by(|a, b| b.char_len.cmp(&a.char_len).then(a.product.cmp(&b.product)));
        }
        Ok(Catalog {
            products,
            label_index,
            gazetteer,
        })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let file: CatalogFile = io::read_json(path)?;
        Catalog::new(file.products)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        io::write_json(path, &self.to_file())
    }

    pub fn to_file(&self) -> CatalogFile {
        CatalogFile {
            products: self.products.clone(),
        }
    }

    /// Content hash over the canonical serialization, independent of the
    /// formatting of the file it was loaded from.
    pub fn hash(&self) -> String {
        io::sha256_hex(&serde_json::to_vec(&self.to_file()).expect("catalog serializes"))
    }

    pub fn len(&self) -> usize {
        self.products.len()
    }

    pub fn is_empty(&self) -> bool {
        self.products.is_empty()
    }

    pub fn products(&self) -> &[Product] {
        &self.products
    }

    pub fn product(&self, label: usize) -> &Product {
        &self.products[label]
    }

    pub fn label_of(&self, product_id: &str) -> Option<usize> {
        self.label_index.get(product_id).copied()
    }

    pub fn contains(&self, product_id: &str) -> bool {
        self.label_index.contains_key(product_id)
    }

    /// Left-to-right longest-match alias extraction over the normalized query.
    pub fn extract_products(&self, query: &str) -> Vec<NerMatch> {
        let norm = normalize(query);
        if norm.is_empty() {
            return Vec::new();
        }
        // (token, char start)
        let mut tokens = Vec::new();
        let mut offset = 0;
        for tok in norm.split(' ') {
            tokens.push((tok, offset));
            offset += tok.chars().count() + 1;
        }

        let mut matches = Vec::new();
        let mut i = 0;
        while i < tokens.len() {
            let hit = self.gazetteer.get(tokens[i].0).and_then(|entries| {
                entries.iter().find(|e| {
                    e.tokens.len() <= tokens.len() - i && e.tokens.iter().zip(&tokens[i..]).all(|(a, (t, _))| a == t)
                })
            });
            match hit {
                Some(entry) => {
                    let start = tokens[i].1;
                    matches.push(NerMatch {
                        product_id: self.products[entry.product].id.clone(),
                        span: (start, start + entry.char_len),
                        matched_alias: entry.alias.clone(),
                    });
                    i += entry.tokens.len();
                }
                None => i += 1,
            }
        }
        matches
    }

    /// Distinct matched products in order of first appearance.
    pub fn explicit_products(&self, query: &str) -> Vec<String> {
        let mut out: Vec<String> = Vec::new();
        for m in self.extract_products(query) {
            if !out.contains(&m.product_id) {
                out.push(m.product_id);
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn product(id: &str, aliases: &[&str]) -> Product {
        Product {
            id: id.into(),
            display_name: id.to_uppercase(),
            aliases: aliases.iter().map(|s| s.to_string()).collect(),
        }
    }

    fn premiere() -> Catalog {
        Catalog::new(vec![
            product("ps", &["photoshop"]),
            product("pr", &["premiere pro", "premiere"]),
            product("ru", &["premiere rush"]),
        ])
        .unwrap()
    }

    #[test]
    fn normalize_examples() {
        assert_eq!(normalize("Photoshop!!"), "photoshop");
        assert_eq!(normalize("  Premiere   Pro "), "premiere pro");
        assert_eq!(normalize("AI GENERATIVE FILL"), "ai generative fill");
        assert_eq!(normalize(""), "");
        assert_eq!(normalize("...!"), "");
        // NFC: decomposed e + combining acute composes.
        assert_eq!(normalize("Cafe\u{301}"), "caf\u{e9}");
    }

    #[test]
    fn label_index_follows_file_order() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("catalog.json");
        std::fs::write(
            &path,
            r#"{"products":[
                {"id":"ps","display_name":"Photoshop","aliases":["photoshop"]},
                {"id":"pr","display_name":"Premiere Pro","aliases":["premiere pro"]},
                {"id":"ai","display_name":"Illustrator","aliases":["illustrator"]}]}"#,
        )
        .unwrap();
        let cat = Catalog::load(&path).unwrap();
        assert_eq!(cat.len(), 3);
        assert_eq!(cat.label_of("ps"), Some(0));
        assert_eq!(cat.label_of("pr"), Some(1));
        assert_eq!(cat.label_of("ai"), Some(2));
    }

    #[test]
    fn forty_six_products() {
        let products = (0..46)
            .map(|i| product(&format!("p{i}"), &[&format!("prod{i}")]))
            .collect();
        assert_eq!(Catalog::new(products).unwrap().len(), 46);
    }

    #[test]
    fn rejects_bad_catalogs() {
        let dup = Catalog::new(vec![product("ps", &["a"]), product("ps", &["b"])]);
        assert!(matches!(dup, Err(Error::DuplicateProductId(id)) if id == "ps"));
        let empty_alias = Catalog::new(vec![product("ps", &["!!"])]);
        assert!(matches!(empty_alias, Err(Error::EmptyAlias { .. })));
        assert!(matches!(
            Catalog::new(vec![product("", &["x"])]),
            Err(Error::EmptyProductId)
        ));
    }

    #[test]
    fn single_alias_hit() {
        let m = premiere().extract_products("photoshop generative fill");
        assert_eq!(
            m,
            vec![NerMatch {
                product_id: "ps".into(),
                span: (0, 9),
                matched_alias: "photoshop".into()
            }]
        );
    }

    #[test]
    fn implicit_query_has_no_match() {
        assert!(premiere().extract_products("edit video").is_empty());
    }

    #[test]
    fn longest_match_suppresses_prefix_alias() {
        let m = premiere().extract_products("premiere pro vs premiere rush");
        let got: Vec<_> = m.iter().map(|m| (m.product_id.as_str(), m.span)).collect();
        assert_eq!(got, vec![("pr", (0, 12)), ("ru", (16, 29))]);
    }

    #[test]
    fn token_boundaries_only() {
        // "photoshopping" does not contain the alias at a token boundary.
        assert!(premiere().extract_products("photoshopping tips").is_empty());
        assert_eq!(premiere().extract_products("use premiere").len(), 1);
    }

    #[test]
    fn identical_alias_tie_goes_to_catalog_order() {
        let cat = Catalog::new(vec![product("a", &["spark"]), product("b", &["spark"])]).unwrap();
        let m = cat.extract_products("spark video");
        assert_eq!(m.len(), 1);
        assert_eq!(m[0].product_id, "a");
    }

    #[test]
    fn spans_point_into_normalized_query() {
        let cat = premiere();
        let q = "How do I export in PREMIERE-PRO??";
        let norm = normalize(q);
        for m in cat.extract_products(q) {
            let s: String = norm.chars().skip(m.span.0).take(m.span.1 - m.span.0).collect();
            assert_eq!(s, m.matched_alias);
        }
    }
}
