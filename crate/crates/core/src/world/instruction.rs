use serde::{Deserialize, Serialize};

use super::{NodeId, WorldGraph};
use crate::error::{Error, Result};
use crate::geometry::heading;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum TokenKind {
    Function,
    Direction,
    Room,
    Object,
}

impl TokenKind {
    pub const ALL: [TokenKind; 4] = [TokenKind::Function, TokenKind::Direction, TokenKind::Room, TokenKind::Object];

    pub fn index(self) -> usize {
        self as usize
    }
}

/// Instruction split by which landmark terms it mentions.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Category {
    /// Two or more room terms, no object terms.
    S1,
    /// Two or more object terms, no room terms.
    S2,
    /// Four or more combined room and object terms.
    S3,
    Plain,
}

impl Category {
    pub const SPLITS: [Category; 3] = [Category::S1, Category::S2, Category::S3];

    pub fn label(self) -> &'static str {
        match self {
            Category::S1 => "S1",
            Category::S2 => "S2",
            Category::S3 => "S3",
            Category::Plain => "plain",
        }
    }
}

const FUNCTION_WORDS: [&str; 9] = ["walk", "through", "past", "the", "then", "to", "in", "and", "stop"];
const DIRECTION_WORDS: [&str; 4] = ["north", "east", "south", "west"];
const ROOM_NAMES: [&str; 8] =
    ["kitchen", "bedroom", "bathroom", "hallway", "living_room", "dining_room", "office", "laundry_room"];
const OBJECT_NAMES: [&str; 16] = [
    "oven", "fridge", "bed", "lamp", "toilet", "sink", "stairs", "mirror", "sofa", "tv", "table", "chair", "desk",
    "shelf", "washer", "plant",
];

/// Fixed token vocabulary: function words, compass directions, then one
/// word per room type and per object class.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Vocabulary {
    pub words: Vec<String>,
    pub kinds: Vec<TokenKind>,
    pub room_vocab: usize,
    pub object_vocab: usize,
}

impl Vocabulary {
    pub fn new(room_vocab: usize, object_vocab: usize) -> Self {
        let mut words = Vec::new();
        let mut kinds = Vec::new();
        let mut push = |w: String, k: TokenKind| {
            words.push(w);
            kinds.push(k);
        };
        FUNCTION_WORDS.iter().for_each(|w| push(w.to_string(), TokenKind::Function));
        DIRECTION_WORDS.iter().for_each(|w| push(w.to_string(), TokenKind::Direction));
        for r in 0..room_vocab {
            let name = if room_vocab == ROOM_NAMES.len() { ROOM_NAMES[r].to_string() } else { format!("room{r}") };
            push(name, TokenKind::Room);
        }
        for o in 0..object_vocab {
            let name =
                if object_vocab == OBJECT_NAMES.len() { OBJECT_NAMES[o].to_string() } else { format!("object{o}") };
            push(name, TokenKind::Object);
        }
        Self { words, kinds, room_vocab, object_vocab }
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn function(&self, word: &str) -> usize {
        FUNCTION_WORDS.iter().position(|w| *w == word).expect("known function word")
    }

    pub fn direction(&self, k: usize) -> usize {
        FUNCTION_WORDS.len() + k
    }

    pub fn room(&self, r: usize) -> usize {
        FUNCTION_WORDS.len() + DIRECTION_WORDS.len() + r
    }

    pub fn object(&self, o: usize) -> usize {
        FUNCTION_WORDS.len() + DIRECTION_WORDS.len() + self.room_vocab + o
    }

    pub fn kind(&self, token: usize) -> Option<TokenKind> {
        self.kinds.get(token).copied()
    }

    pub fn lookup(&self, word: &str) -> Option<usize> {
        self.words.iter().position(|w| w == word)
    }

    pub fn render(&self, tokens: &[usize]) -> String {
        tokens.iter().map(|&t| self.words.get(t).map_or("<unk>", String::as_str)).collect::<Vec<_>>().join(" ")
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Instruction {
    pub tokens: Vec<usize>,
    pub category: Category,
    /// Hidden from the agent; used only by metrics.
    pub goal_node_id: NodeId,
}

impl Instruction {
    pub fn count(&self, vocab: &Vocabulary, kind: TokenKind) -> usize {
        self.tokens.iter().filter(|&&t| vocab.kind(t) == Some(kind)).count()
    }
}

/// The object that best tells `node` apart from the other neighbors of `from`.
fn distinctive_object(world: &WorldGraph, from: NodeId, node: NodeId) -> Result<usize> {
    let target = &world.node(node)?.semantic;
    let mut rival = vec![0.0f64; target.len()];
    for (sib, _) in world.neighbors(from)? {
        if sib == node {
            continue;
        }
        for (r, v) in rival.iter_mut().zip(&world.node(sib)?.semantic) {
            *r = r.max(*v);
        }
    }
    let best = target
        .iter()
        .zip(&rival)
        .enumerate()
        .max_by(|a, b| (a.1 .0 - a.1 .1).total_cmp(&(b.1 .0 - b.1 .1)).then(b.0.cmp(&a.0)))
        .map(|(o, _)| o)
        .expect("object vocabulary is nonempty");
    Ok(best)
}

fn compass(world: &WorldGraph, a: NodeId, b: NodeId) -> Result<usize> {
    let h = heading(&world.node(a)?.position, &world.node(b)?.position);
    Ok(((h / std::f64::consts::FRAC_PI_2 + 0.5).floor() as usize) % 4)
}

fn dedup(xs: Vec<usize>) -> Vec<usize> {
    let mut out: Vec<usize> = Vec::with_capacity(xs.len());
    for x in xs {
        if out.last() != Some(&x) {
            out.push(x);
        }
    }
    out
}

/// Describe `path` with landmark terms allowed by `category`.
///
/// Room terms name the room types entered along the path (consecutive
/// repeats collapsed). Object terms name, for each hop, the object that most
/// distinguishes the next node from the other nodes reachable at that hop.
pub fn generate_instruction(
    world: &WorldGraph,
    vocab: &Vocabulary,
    path: &[NodeId],
    category: Category,
) -> Result<Instruction> {
    let Some(&goal) = path.last() else {
        return Err(Error::Generation("empty expert path".into()));
    };
    for w in path.windows(2) {
        if world.edge_length(w[0], w[1]).is_none() {
            return Err(Error::Generation(format!("path step {} -> {} is not an edge", w[0], w[1])));
        }
    }
    let rooms = dedup(path.iter().map(|&n| world.node(n).map(|n| n.room_type)).collect::<Result<Vec<_>>>()?);
    let the = vocab.function("the");
    let then = vocab.function("then");
    let stop = [vocab.function("and"), vocab.function("stop")];

    let mut tokens = vec![vocab.function("walk")];
    match category {
        Category::S1 => {
            if rooms.len() < 2 {
                return Err(Error::Generation("S1 needs a path crossing at least two rooms".into()));
            }
            tokens.push(vocab.function("through"));
            for (k, &r) in rooms.iter().enumerate() {
                if k > 0 {
                    tokens.extend([then, vocab.function("to")]);
                }
                tokens.extend([the, vocab.room(r)]);
            }
        }
        Category::S2 => {
            let mut objects = Vec::new();
            for w in path.windows(2) {
                objects.push(distinctive_object(world, w[0], w[1])?);
            }
            let objects = dedup(objects);
            if objects.len() < 2 {
                return Err(Error::Generation("S2 needs at least two object landmarks".into()));
            }
            for (k, &o) in objects.iter().enumerate() {
                if k > 0 {
                    tokens.push(then);
                }
                tokens.extend([vocab.function("past"), the, vocab.object(o)]);
            }
        }
        Category::S3 => {
            if rooms.len() < 2 || path.len() < 3 {
                return Err(Error::Generation("S3 needs two rooms and two object landmarks".into()));
            }
            let start_room = world.node(path[0])?.room_type;
            tokens.extend([vocab.function("in"), the, vocab.room(start_room)]);
            let mut last_room = start_room;
            let mut last_object = None;
            let mut objects = 0;
            for w in path.windows(2) {
                let room = world.node(w[1])?.room_type;
                if room != last_room {
                    tokens.extend([then, vocab.function("to"), the, vocab.room(room)]);
                    last_room = room;
                }
                let o = distinctive_object(world, w[0], w[1])?;
                if last_object != Some(o) {
                    tokens.extend([vocab.function("past"), the, vocab.object(o)]);
                    last_object = Some(o);
                    objects += 1;
                }
            }
            if objects < 2 || rooms.len() + objects < 4 {
                return Err(Error::Generation("S3 needs at least four room and object terms".into()));
            }
        }
        Category::Plain => {
            for (k, w) in path.windows(2).enumerate() {
                if k > 0 {
                    tokens.push(then);
                }
                tokens.push(vocab.direction(compass(world, w[0], w[1])?));
            }
        }
    }
    tokens.extend(stop);
    Ok(Instruction { tokens, category, goal_node_id: goal })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::world::{generate_world, WorldConfig};

    #[test]
    fn vocabulary_layout() {
        let v = Vocabulary::new(8, 16);
        assert_eq!(v.len(), 9 + 4 + 8 + 16);
        assert_eq!(v.kind(v.room(0)), Some(TokenKind::Room));
        assert_eq!(v.kind(v.object(15)), Some(TokenKind::Object));
        assert_eq!(v.words[v.object(1)], "fridge");
        assert_eq!(v.lookup("kitchen"), Some(v.room(0)));
        let small = Vocabulary::new(2, 3);
        assert_eq!(small.words[small.object(2)], "object2");
    }

    fn multi_room_path(world: &WorldGraph, rooms_needed: usize) -> Vec<NodeId> {
        for a in 0..world.len() as NodeId {
            for b in (0..world.len() as NodeId).rev() {
                let (p, _) = world.shortest_path(a, b).unwrap();
                let rooms = dedup(p.iter().map(|&n| world.node(n).unwrap().room_type).collect());
                if rooms.len() >= rooms_needed && p.len() >= 4 {
                    return p;
                }
            }
        }
        panic!("no path crossing {rooms_needed} rooms");
    }

    #[test]
    fn category_constraints() {
        let world = generate_world(&WorldConfig { seed: 5, ..Default::default() }).unwrap();
        let vocab = Vocabulary::new(8, 16);
        let path = multi_room_path(&world, 3);
        let s1 = generate_instruction(&world, &vocab, &path, Category::S1).unwrap();
        assert!(s1.count(&vocab, TokenKind::Room) >= 2);
        assert_eq!(s1.count(&vocab, TokenKind::Object), 0);
        assert_eq!(s1.goal_node_id, *path.last().unwrap());
        if let Ok(s2) = generate_instruction(&world, &vocab, &path, Category::S2) {
            assert!(s2.count(&vocab, TokenKind::Object) >= 2);
            assert_eq!(s2.count(&vocab, TokenKind::Room), 0);
        }
        let s3 = generate_instruction(&world, &vocab, &path, Category::S3).unwrap();
        assert!(s3.count(&vocab, TokenKind::Room) + s3.count(&vocab, TokenKind::Object) >= 4);
        let plain = generate_instruction(&world, &vocab, &path, Category::Plain).unwrap();
        assert_eq!(plain.count(&vocab, TokenKind::Direction), path.len() - 1);
    }

    #[test]
    fn one_room_path_cannot_be_s1_or_s3() {
        let world = generate_world(&WorldConfig { seed: 5, ..Default::default() }).unwrap();
        let vocab = Vocabulary::new(8, 16);
        let (path, _) = world.shortest_path(0, 1).unwrap();
        assert!(matches!(generate_instruction(&world, &vocab, &path, Category::S1), Err(Error::Generation(_))));
        assert!(matches!(generate_instruction(&world, &vocab, &path, Category::S3), Err(Error::Generation(_))));
        assert!(matches!(generate_instruction(&world, &vocab, &[], Category::Plain), Err(Error::Generation(_))));
    }
}
