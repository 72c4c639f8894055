use std::collections::BTreeMap;

/// Character trie used by the lexicon matcher and the subword tokenizer.
#[derive(Debug, Clone)]
pub(crate) struct CharTrie<V> {
    nodes: Vec<Node<V>>,
}

#[derive(Debug, Clone)]
struct Node<V> {
    children: BTreeMap<char, usize>,
    value: Option<V>,
}

impl<V> Node<V> {
    fn empty() -> Self {
        Node {
            children: BTreeMap::new(),
            value: None,
        }
    }
}

impl<V> Default for CharTrie<V> {
    fn default() -> Self {
        CharTrie {
            nodes: vec![Node::empty()],
        }
    }
}

impl<V> CharTrie<V> {
    /// Inserts `key`, returning the previous value stored under it.
    pub(crate) fn insert<I: IntoIterator<Item = char>>(&mut self, key: I, value: V) -> Option<V> {
        let mut cur = 0;
        for c in key {
            cur = match self.nodes[cur].children.get(&c) {
                Some(&next) => next,
                None => {
                    self.nodes.push(Node::empty());
                    let next = self.nodes.len() - 1;
                    self.nodes[cur].children.insert(c, next);
                    next
                }
            };
        }
        self.nodes[cur].value.replace(value)
    }

    /// All keys that are prefixes of `text[start..]`, as `(end, value)` in
    /// increasing `end` order.
    pub(crate) fn prefixes_at<'a>(&'a self, text: &[char], start: usize) -> Vec<(usize, &'a V)> {
        let mut out = Vec::new();
        let mut cur = 0;
        for (offset, c) in text[start..].iter().enumerate() {
            match self.nodes[cur].children.get(c) {
                Some(&next) => cur = next,
                None => break,
            }
            if let Some(v) = &self.nodes[cur].value {
                out.push((start + offset + 1, v));
            }
        }
        out
    }

    pub(crate) fn longest_prefix_at(&self, text: &[char], start: usize) -> Option<(usize, &V)> {
        self.prefixes_at(text, start).pop()
    }
}
