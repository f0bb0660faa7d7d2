//! Synthetic task generators with coupled position IDs, the PoSE and
//! random-offset ID rules, and the predicted-position-coupling decode loop.

use std::collections::BTreeMap;

use rand::seq::{index, SliceRandom};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::domain::{Special, Token, TokenSeq, Vocab};
use crate::error::{Error, Result};
use crate::rng::{split, LabRng};

pub type PositionId = usize;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TaggedExample {
    pub tokens: TokenSeq,
    pub position_ids: Vec<PositionId>,
    /// 0-based index of the first target position.
    pub predict_from: usize,
    pub answer: Option<Token>,
    #[serde(default)]
    pub meta: BTreeMap<String, serde_json::Value>,
}

impl TaggedExample {
    pub fn validate(&self) -> Result<()> {
        if self.tokens.len() != self.position_ids.len() {
            return Err(Error::DimensionMismatch { left: self.tokens.len(), right: self.position_ids.len() });
        }
        if self.predict_from > self.tokens.len() {
            return Err(Error::param(format!(
                "predict_from {} past the end ({})",
                self.predict_from,
                self.tokens.len()
            )));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }
}

fn meta(pairs: &[(&str, serde_json::Value)]) -> BTreeMap<String, serde_json::Value> {
    pairs.iter().map(|(k, v)| (k.to_string(), v.clone())).collect()
}

/// `1..N` as ids `0..N-1`, then `t0`, `t1`, `<bos>`, `<sep>`.
pub fn sparse_parity_vocab(n: usize) -> Result<Vocab> {
    let mut names: Vec<(String, Option<Special>)> = (1..=n).map(|j| (j.to_string(), None)).collect();
    names.push(("t0".into(), None));
    names.push(("t1".into(), None));
    names.push(("<bos>".into(), Some(Special::Bos)));
    names.push(("<sep>".into(), Some(Special::Sep)));
    Vocab::from_names(names)
}

fn bit_token(n: usize, b: u8) -> Token {
    (n + b as usize) as Token
}

/// BOS, J_1, t_{b_1}, …, J_ℓ, t_{b_ℓ}, SEP, t_{b*} with b* the XOR of the
/// bits whose J is at most N/2.
pub fn sparse_parity_from(n: usize, j: &[usize], b: &[u8]) -> Result<TaggedExample> {
    if n < 2 || n % 2 != 0 {
        return Err(Error::param("sparse parity needs an even N >= 2"));
    }
    if j.len() != b.len() || j.is_empty() {
        return Err(Error::param("J and b must be nonempty and of equal length"));
    }
    if j.iter().any(|&v| v == 0 || v > n) || b.iter().any(|&v| v > 1) {
        return Err(Error::param("J must lie in [1, N] and b in {0, 1}"));
    }
    let len = j.len();
    let k = j.iter().filter(|&&v| v <= n / 2).count();
    let star = j.iter().zip(b).filter(|(&v, _)| v <= n / 2).fold(0u8, |a, (_, &bit)| a ^ bit);
    let mut tokens = Vec::with_capacity(2 * len + 3);
    tokens.push((n + 2) as Token);
    for (&v, &bit) in j.iter().zip(b) {
        tokens.push((v - 1) as Token);
        tokens.push(bit_token(n, bit));
    }
    tokens.push((n + 3) as Token);
    let answer = bit_token(n, star);
    tokens.push(answer);
    let position_ids = (0..tokens.len()).collect();
    Ok(TaggedExample {
        predict_from: tokens.len() - 1,
        tokens,
        position_ids,
        answer: Some(answer),
        meta: meta(&[("task", "sparse_parity".into()), ("len", len.into()), ("k", k.into()), ("n", n.into())]),
    })
}

pub fn gen_sparse_parity(len: usize, k: usize, n: usize, rng: &mut LabRng) -> Result<TaggedExample> {
    if k == 0 || k > len {
        return Err(Error::param(format!("need 1 <= k <= len, got k = {k}, len = {len}")));
    }
    if n < 2 || n % 2 != 0 {
        return Err(Error::param("sparse parity needs an even N >= 2"));
    }
    let flagged = index::sample(rng, len, k).into_vec();
    let half = n / 2;
    let mut j = vec![0usize; len];
    for (i, v) in j.iter_mut().enumerate() {
        *v = if flagged.contains(&i) { rng.gen_range(1..=half) } else { rng.gen_range(half + 1..=n) };
    }
    let b: Vec<u8> = (0..len).map(|_| rng.gen_range(0..=1)).collect();
    sparse_parity_from(n, &j, &b)
}

/// `0`, `1`, `<bos>`, `<sep>`.
pub fn parity_vocab() -> Vocab {
    Vocab::from_names([("0", None), ("1", None), ("<bos>", Some(Special::Bos)), ("<sep>", Some(Special::Sep))])
        .expect("fixed vocabulary")
}

/// BOS, b_1..b_ℓ, SEP, then every `jump`-th prefix parity. Input IDs repeat
/// each scratchpad ID `jump` times; BOS and SEP sit at 0.
pub fn parity_scratchpad_from(bits: &[u8], jump: usize) -> Result<TaggedExample> {
    let len = bits.len();
    if len == 0 || jump == 0 || len % jump != 0 {
        return Err(Error::param(format!("jump {jump} must divide the length {len}")));
    }
    if bits.iter().any(|&b| b > 1) {
        return Err(Error::param("bits must be 0 or 1"));
    }
    let mut tokens = vec![2];
    let mut ids = vec![0];
    for (i, &b) in bits.iter().enumerate() {
        tokens.push(b as Token);
        ids.push(i / jump + 1);
    }
    tokens.push(3);
    ids.push(0);
    let predict_from = tokens.len();
    let mut acc = 0u8;
    for (i, &b) in bits.iter().enumerate() {
        acc ^= b;
        if (i + 1) % jump == 0 {
            tokens.push(acc as Token);
            ids.push((i + 1) / jump);
        }
    }
    Ok(TaggedExample {
        answer: tokens.last().copied(),
        tokens,
        position_ids: ids,
        predict_from,
        meta: meta(&[("task", "parity_scratchpad".into()), ("len", len.into()), ("jump", jump.into())]),
    })
}

pub fn gen_parity_scratchpad(len: usize, jump: usize, rng: &mut LabRng) -> Result<TaggedExample> {
    if len == 0 || jump == 0 || len % jump != 0 {
        return Err(Error::param(format!("jump {jump} must divide the length {len}")));
    }
    let bits: Vec<u8> = (0..len).map(|_| rng.gen_range(0..=1)).collect();
    parity_scratchpad_from(&bits, jump)
}

/// `v1..vV` as ids `0..V-1`, then `<-`, `<bos>`, `<sep1>`, `<sep2>`.
pub fn variable_vocab(vars: usize) -> Result<Vocab> {
    let mut names: Vec<(String, Option<Special>)> = (1..=vars).map(|i| (format!("v{i}"), None)).collect();
    names.push(("<-".into(), Some(Special::Assign)));
    names.push(("<bos>".into(), Some(Special::Bos)));
    names.push(("<sep1>".into(), Some(Special::Sep1)));
    names.push(("<sep2>".into(), Some(Special::Sep2)));
    Vocab::from_names(names)
}

/// Number of chains for a target input length: the largest w with 3·w·d ≤ ℓ.
pub fn chains_for(len: usize, depth: usize) -> usize {
    if depth == 0 {
        0
    } else {
        len / (3 * depth)
    }
}

/// Builds the example from explicit chains (each `depth + 1` variables,
/// chain 0 being the queried one) and an interleaving given as the chain
/// index of every input assignment.
pub fn variable_assignment_from(vars: usize, chains: &[Vec<Token>], order: &[usize]) -> Result<TaggedExample> {
    let w = chains.len();
    let depth = chains.first().map_or(0, |c| c.len().saturating_sub(1));
    if w == 0 || depth == 0 || chains.iter().any(|c| c.len() != depth + 1) {
        return Err(Error::param("chains must be nonempty with a common depth >= 1"));
    }
    let mut flat: Vec<Token> = chains.iter().flatten().copied().collect();
    if flat.iter().any(|&v| v as usize >= vars) {
        return Err(Error::param("variable id outside the vocabulary"));
    }
    flat.sort_unstable();
    if flat.windows(2).any(|p| p[0] == p[1]) {
        return Err(Error::param("chain variables must be distinct"));
    }
    let mut counts = vec![0usize; w];
    for &c in order {
        if c >= w {
            return Err(Error::param(format!("interleaving names chain {c} of {w}")));
        }
        counts[c] += 1;
    }
    if counts.iter().any(|&c| c != depth) {
        return Err(Error::param("interleaving must list every chain exactly depth times"));
    }
    let assign = vars as Token;
    let (bos, sep1, sep2) = (assign + 1, assign + 2, assign + 3);
    let mut tokens = vec![bos, chains[0][0], sep1];
    let mut ids: Vec<PositionId> = vec![0, 1, 2];
    let mut step = vec![0usize; w];
    // Position ID of the left-hand side of v_{1,j} <- v_{1,j+1}.
    let mut lhs_id = vec![0usize; depth];
    for &c in order {
        let s = step[c];
        step[c] += 1;
        let id = ids.len();
        if c == 0 {
            lhs_id[s] = id;
        }
        tokens.extend_from_slice(&[chains[c][s], assign, chains[c][s + 1]]);
        ids.extend_from_slice(&[id, id + 1, id + 2]);
    }
    tokens.push(sep2);
    ids.push(0);
    let predict_from = tokens.len();
    for s in 0..depth {
        tokens.extend_from_slice(&[chains[0][s], assign, chains[0][s + 1]]);
        ids.extend_from_slice(&[lhs_id[s], lhs_id[s] + 1, lhs_id[s] + 2]);
    }
    Ok(TaggedExample {
        tokens,
        position_ids: ids,
        predict_from,
        answer: Some(chains[0][depth]),
        meta: meta(&[
            ("task", "variable_assignment".into()),
            ("depth", depth.into()),
            ("chains", w.into()),
            ("vars", vars.into()),
        ]),
    })
}

pub fn gen_variable_assignment(len: usize, depth: usize, vars: usize, rng: &mut LabRng) -> Result<TaggedExample> {
    let w = chains_for(len, depth);
    if w == 0 {
        return Err(Error::param(format!("length {len} cannot hold one chain of depth {depth}")));
    }
    let need = w * (depth + 1);
    if need > vars {
        return Err(Error::param(format!("{w} chains of depth {depth} need {need} variables, have {vars}")));
    }
    let picked = index::sample(rng, vars, need).into_vec();
    let chains: Vec<Vec<Token>> = picked.chunks(depth + 1).map(|c| c.iter().map(|&v| v as Token).collect()).collect();
    let mut order: Vec<usize> = (0..w).flat_map(|c| std::iter::repeat(c).take(depth)).collect();
    order.shuffle(rng);
    variable_assignment_from(vars, &chains, &order)
}

/// `s1..sA` as ids `0..A-1`, then `<sep>`.
pub fn reversal_vocab(alphabet: usize) -> Result<Vocab> {
    let mut names: Vec<(String, Option<Special>)> = (1..=alphabet).map(|i| (format!("s{i}"), None)).collect();
    names.push(("<sep>".into(), Some(Special::Sep)));
    Vocab::from_names(names)
}

/// X_1..X_L, SEP, X_L..X_1 with IDs 1..L, 0, L..1.
pub fn string_reversal_from(x: &[Token], sep: Token) -> Result<TaggedExample> {
    let len = x.len();
    if len == 0 {
        return Err(Error::param("string reversal needs L >= 1"));
    }
    let mut tokens = x.to_vec();
    tokens.push(sep);
    tokens.extend(x.iter().rev());
    let mut ids: Vec<PositionId> = (1..=len).collect();
    ids.push(0);
    ids.extend((1..=len).rev());
    Ok(TaggedExample {
        tokens,
        position_ids: ids,
        predict_from: len + 1,
        answer: None,
        meta: meta(&[("task", "string_reversal".into()), ("len", len.into())]),
    })
}

pub fn gen_string_reversal(len: usize, alphabet: usize, rng: &mut LabRng) -> Result<TaggedExample> {
    if alphabet == 0 {
        return Err(Error::param("alphabet must be nonempty"));
    }
    let x: Vec<Token> = (0..len).map(|_| rng.gen_range(0..alphabet) as Token).collect();
    string_reversal_from(&x, alphabet as Token)
}

/// Two-chunk PoSE IDs from an explicit first-chunk length and starts.
pub fn pose_positions_from(len: usize, first: usize, j0: usize, j1: usize, max_len: usize) -> Result<Vec<PositionId>> {
    if len == 0 || len >= max_len {
        return Err(Error::param(format!("PoSE needs 1 <= len < L_max, got len = {len}, L_max = {max_len}")));
    }
    let top = max_len - len;
    if j0 == 0 || j1 == 0 || j0 > top || j1 > top {
        return Err(Error::param(format!("chunk starts must lie in [1, {top}]")));
    }
    if first == 0 || first > len || (first == len && len > 1) {
        return Err(Error::param(format!("first chunk length {first} must leave both chunks nonempty")));
    }
    let lo = j0.min(j1);
    let hi = j0.max(j1) + first;
    Ok((0..first).map(|i| lo + i).chain((0..len - first).map(|i| hi + i)).collect())
}

/// Split point uniform on {1..ℓ−1} (a single chunk when ℓ = 1); chunk
/// starts J_0, J_1 ~ Unif([L_max − ℓ]).
pub fn pose_positions(len: usize, max_len: usize, rng: &mut LabRng) -> Result<Vec<PositionId>> {
    if len == 0 || len >= max_len {
        return Err(Error::param(format!("PoSE needs 1 <= len < L_max, got len = {len}, L_max = {max_len}")));
    }
    let first = if len == 1 { 1 } else { rng.gen_range(1..len) };
    let top = max_len - len;
    let j0 = rng.gen_range(1..=top);
    let j1 = rng.gen_range(1..=top);
    pose_positions_from(len, first, j0, j1, max_len)
}

/// Whether zero IDs (BOS/SEP defaults) move with the offset.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ZeroIds {
    #[default]
    Keep,
    Shift,
}

fn offset_ceiling(ids: &[PositionId], zeros: ZeroIds) -> PositionId {
    ids.iter().copied().filter(|&i| i != 0 || zeros == ZeroIds::Shift).max().unwrap_or(0)
}

pub fn offset_positions_by(ids: &[PositionId], delta: usize, zeros: ZeroIds) -> Vec<PositionId> {
    ids.iter().map(|&i| if i == 0 && zeros == ZeroIds::Keep { 0 } else { i + delta }).collect()
}

/// Adds Δ ~ Unif({0..L_max − max_id}) to every ID that moves.
pub fn offset_positions(
    ids: &[PositionId],
    max_len: usize,
    zeros: ZeroIds,
    rng: &mut LabRng,
) -> Result<Vec<PositionId>> {
    let top = offset_ceiling(ids, zeros);
    if top > max_len {
        return Err(Error::param(format!("largest position ID {top} exceeds L_max = {max_len}")));
    }
    let delta = rng.gen_range(0..=max_len - top);
    Ok(offset_positions_by(ids, delta, zeros))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PpcStep {
    pub token: Token,
    pub position_id: PositionId,
}

pub fn ppc_targets(ex: &TaggedExample) -> Vec<PpcStep> {
    (ex.predict_from..ex.tokens.len())
        .map(|p| PpcStep { token: ex.tokens[p], position_id: ex.position_ids[p] })
        .collect()
}

/// Next (token, position ID) from a prefix of both streams.
pub trait Predictor {
    fn predict(&self, tokens: &[Token], position_ids: &[PositionId]) -> PpcStep;
}

/// Reads the answer off a hidden example.
pub struct OraclePredictor {
    example: TaggedExample,
}

impl OraclePredictor {
    pub fn new(example: TaggedExample) -> Self {
        OraclePredictor { example }
    }
}

impl Predictor for OraclePredictor {
    fn predict(&self, tokens: &[Token], _: &[PositionId]) -> PpcStep {
        let p = tokens.len().min(self.example.tokens.len() - 1);
        PpcStep { token: self.example.tokens[p], position_id: self.example.position_ids[p] }
    }
}

/// Oracle whose position ID at one absolute index is off by one.
pub struct CorruptedOracle {
    inner: OraclePredictor,
    at: usize,
}

impl CorruptedOracle {
    pub fn new(example: TaggedExample, at: usize) -> Self {
        CorruptedOracle { inner: OraclePredictor::new(example), at }
    }
}

impl Predictor for CorruptedOracle {
    fn predict(&self, tokens: &[Token], ids: &[PositionId]) -> PpcStep {
        let mut s = self.inner.predict(tokens, ids);
        if tokens.len() == self.at {
            s.position_id += 1;
        }
        s
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Divergence {
    /// 0-based decode step.
    pub step: usize,
    /// 0-based index in the full sequence.
    pub position: usize,
    pub expected: PpcStep,
    pub got: PpcStep,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PpcOutcome {
    pub steps: Vec<PpcStep>,
    pub full_match: bool,
    pub divergence: Option<Divergence>,
    /// Set when `max_steps` ran out before the targets did.
    pub exhausted: bool,
}

/// Feeds each predicted (token, position ID) back as the next input until
/// the targets are consumed.
pub fn ppc_decode(pred: &dyn Predictor, ex: &TaggedExample, max_steps: usize) -> PpcOutcome {
    let targets = ppc_targets(ex);
    let mut tokens = ex.tokens[..ex.predict_from].to_vec();
    let mut ids = ex.position_ids[..ex.predict_from].to_vec();
    let mut steps = Vec::with_capacity(targets.len());
    let mut divergence = None;
    for (t, want) in targets.iter().enumerate() {
        if t >= max_steps {
            break;
        }
        let got = pred.predict(&tokens, &ids);
        if divergence.is_none() && got != *want {
            divergence = Some(Divergence { step: t, position: ex.predict_from + t, expected: *want, got });
        }
        tokens.push(got.token);
        ids.push(got.position_id);
        steps.push(got);
    }
    let exhausted = steps.len() < targets.len();
    PpcOutcome { full_match: divergence.is_none() && !exhausted, steps, divergence, exhausted }
}

/// Generator parameters for one task.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "task", rename_all = "snake_case")]
pub enum TaskSpec {
    SparseParity { len: usize, k: usize, n: usize },
    ParityScratchpad { len: usize, jump: usize },
    VariableAssignment { len: usize, depth: usize, vars: usize },
    StringReversal { len: usize, alphabet: usize },
}

impl TaskSpec {
    pub fn name(&self) -> &'static str {
        match self {
            TaskSpec::SparseParity { .. } => "sparse_parity",
            TaskSpec::ParityScratchpad { .. } => "parity_scratchpad",
            TaskSpec::VariableAssignment { .. } => "variable_assignment",
            TaskSpec::StringReversal { .. } => "string_reversal",
        }
    }

    pub fn vocab(&self) -> Result<Vocab> {
        match *self {
            TaskSpec::SparseParity { n, .. } => sparse_parity_vocab(n),
            TaskSpec::ParityScratchpad { .. } => Ok(parity_vocab()),
            TaskSpec::VariableAssignment { vars, .. } => variable_vocab(vars),
            TaskSpec::StringReversal { alphabet, .. } => reversal_vocab(alphabet),
        }
    }

    pub fn generate(&self, rng: &mut LabRng) -> Result<TaggedExample> {
        match *self {
            TaskSpec::SparseParity { len, k, n } => gen_sparse_parity(len, k, n, rng),
            TaskSpec::ParityScratchpad { len, jump } => gen_parity_scratchpad(len, jump, rng),
            TaskSpec::VariableAssignment { len, depth, vars } => gen_variable_assignment(len, depth, vars, rng),
            TaskSpec::StringReversal { len, alphabet } => gen_string_reversal(len, alphabet, rng),
        }
    }
}

/// `count` examples; example `i` uses its own stream of `seed`, so output
/// is independent of thread scheduling.
pub fn generate_batch(spec: &TaskSpec, count: usize, seed: u64) -> Result<Vec<TaggedExample>> {
    (0..count).into_par_iter().map(|i| spec.generate(&mut split(seed, i as u64))).collect()
}
