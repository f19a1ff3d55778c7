//! Counterfactual explanations: the greedy gap-filling search, its
//! one-versus-all variant, and four baselines.
//!
//! Every method works on a user's top-k list: `rec` is position 0 and the
//! replacement candidates `I_rep` are positions 1..k. Influence-based
//! methods read from an [`InfluenceTable`], which holds one parameter delta
//! per action and is shared across methods and k values.

mod table;

use serde::{Deserialize, Serialize};

pub use table::{Action, InfluenceTable};

use crate::data::{ItemId, UserId};
use crate::influence::InfluenceConfig;
use crate::model::TrainedModel;
use crate::{Error, Result};

pub const EXPLANATION_SCHEMA: &str = "cfx.explanation/v1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Accent,
    AccentOva,
    PureFia,
    Fia,
    PureAttention,
    Attention,
}

impl Method {
    pub const ALL: [Method; 6] = [
        Method::Accent,
        Method::AccentOva,
        Method::PureFia,
        Method::Fia,
        Method::PureAttention,
        Method::Attention,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Method::Accent => "accent",
            Method::AccentOva => "accent_ova",
            Method::PureFia => "pure_fia",
            Method::Fia => "fia",
            Method::PureAttention => "pure_attention",
            Method::Attention => "attention",
        }
    }

    pub fn needs_attention(self) -> bool {
        matches!(self, Method::PureAttention | Method::Attention)
    }

    pub fn uses_influence(self) -> bool {
        !self.needs_attention()
    }

    pub fn supports(self, kind: crate::model::ModelKind) -> bool {
        !self.needs_attention() || kind == crate::model::ModelKind::Attention
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| Error::Parse {
                line: 0,
                reason: format!("unknown method `{s}`"),
            })
    }
}

/// One removed action.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SetEntry {
    pub item: ItemId,
    pub point: usize,
    /// Estimated reduction of `ŷ_rec − ŷ_alt` this action contributes.
    pub gap_influence: f64,
    /// The value the method ranked this action by.
    pub key: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Explanation {
    pub user: UserId,
    pub method: Method,
    pub rec: ItemId,
    pub rec_star: Option<ItemId>,
    /// The item every `gap_influence` in `set` is measured against: `rec_star`
    /// on success, otherwise the original runner-up.
    pub alt: ItemId,
    pub set: Vec<SetEntry>,
    /// Actions a filtered method looked at and rejected, in visiting order.
    pub skipped: Vec<ItemId>,
    pub estimated_gap_initial: f64,
    pub estimated_gap_remaining: f64,
    /// Gap-influence computations performed.
    pub gap_evaluations: usize,
}

impl Explanation {
    pub fn success(&self) -> bool {
        self.rec_star.is_some()
    }

    pub fn items(&self) -> Vec<ItemId> {
        self.set.iter().map(|e| e.item).collect()
    }

    pub fn points(&self) -> Vec<usize> {
        self.set.iter().map(|e| e.point).collect()
    }

    /// Additive estimate of removing the whole set.
    pub fn estimated_set_influence(&self) -> f64 {
        self.set.iter().map(|e| e.gap_influence).sum()
    }

    /// The swap certificate: the summed gap influences strictly exceed the
    /// initial gap. Summation order matches the search.
    pub fn certificate_holds(&self) -> bool {
        self.estimated_set_influence() > self.estimated_gap_initial
    }

    pub(crate) fn failure(user: UserId, method: Method, rec: ItemId, alt: ItemId, gap: f64) -> Self {
        Self {
            user,
            method,
            rec,
            rec_star: None,
            alt,
            set: Vec::new(),
            skipped: Vec::new(),
            estimated_gap_initial: gap,
            estimated_gap_remaining: gap,
            gap_evaluations: 0,
        }
    }

    /// One JSON line with dense and original ids.
    pub fn to_json_line(&self, model: &TrainedModel) -> Result<String> {
        let ids = &model.dataset().id_map;
        let line = serde_json::json!({
            "schema": EXPLANATION_SCHEMA,
            "user": self.user,
            "user_original": ids.original_user(self.user),
            "method": self.method,
            "success": self.success(),
            "rec": self.rec,
            "rec_original": ids.original_item(self.rec),
            "rec_star": self.rec_star,
            "rec_star_original": self.rec_star.map(|i| ids.original_item(i)),
            "alt": self.alt,
            "set": self.set.iter().map(|e| serde_json::json!({
                "item": e.item,
                "item_original": ids.original_item(e.item),
                "point": e.point,
                "gap_influence": e.gap_influence,
                "key": e.key,
            })).collect::<Vec<_>>(),
            "skipped": self.skipped,
            "estimated_gap_initial": self.estimated_gap_initial,
            "estimated_gap_remaining": self.estimated_gap_remaining,
            "gap_evaluations": self.gap_evaluations,
        });
        Ok(serde_json::to_string(&line)?)
    }
}

fn by_key_then_item(a: &(usize, f64, ItemId), b: &(usize, f64, ItemId)) -> std::cmp::Ordering {
    b.1.total_cmp(&a.1).then(a.2.cmp(&b.2))
}

/// Running per-candidate sums of gap influences.
struct GapSums<'t> {
    table: &'t InfluenceTable,
    sums: Vec<f64>,
}

impl<'t> GapSums<'t> {
    fn new(table: &'t InfluenceTable) -> Self {
        Self {
            table,
            sums: vec![0.0; table.candidates.len()],
        }
    }

    fn add(&mut self, a: usize) {
        for (c, s) in self.sums.iter_mut().enumerate() {
            *s += self.table.gap_influence(a, c);
        }
    }

    /// Candidate whose estimated score is highest (earlier position on ties)
    /// and whether it now beats `rec`.
    fn leader(&self) -> (usize, bool) {
        let mut best = 0;
        let mut best_margin = f64::NEG_INFINITY;
        for (c, s) in self.sums.iter().enumerate() {
            let margin = s - self.table.gap(c);
            if margin > best_margin {
                best = c;
                best_margin = margin;
            }
        }
        (best, self.sums[best] > self.table.gap(best))
    }
}

fn entries_against(table: &InfluenceTable, chosen: &[(usize, f64)], alt: usize) -> Vec<SetEntry> {
    chosen
        .iter()
        .map(|&(a, key)| SetEntry {
            item: table.actions[a].item,
            point: table.actions[a].point,
            gap_influence: table.gap_influence(a, alt),
            key,
        })
        .collect()
}

fn finish(
    table: &InfluenceTable,
    method: Method,
    chosen: &[(usize, f64)],
    skipped: Vec<ItemId>,
    alt: usize,
    success: bool,
    evaluations: usize,
) -> Explanation {
    let set = entries_against(table, chosen, alt);
    let gap = table.gap(alt);
    let total: f64 = set.iter().map(|e| e.gap_influence).sum();
    Explanation {
        user: table.user,
        method,
        rec: table.rec,
        rec_star: success.then(|| table.candidates[alt]),
        alt: table.candidates[alt],
        set,
        skipped,
        estimated_gap_initial: gap,
        estimated_gap_remaining: gap - total,
        gap_evaluations: evaluations,
    }
}

/// Greedy gap filling against every candidate; the smallest successful set
/// wins, earlier candidates on ties. No success gives `rec_star = None` and
/// an empty set.
pub fn accent_on(table: &InfluenceTable) -> Explanation {
    let mut evaluations = 0;
    let mut best: Option<(usize, Vec<SetEntry>, f64)> = None;
    for c in 0..table.candidates.len() {
        let mut ranked: Vec<(usize, f64, ItemId)> = (0..table.actions.len())
            .map(|a| {
                evaluations += 1;
                (a, table.gap_influence(a, c), table.actions[a].item)
            })
            .collect();
        ranked.sort_by(by_key_then_item);
        let gap = table.gap(c);
        let mut sum = 0.0;
        let mut set = Vec::new();
        for &(a, g, item) in &ranked {
            if sum > gap || g <= 0.0 {
                break;
            }
            sum += g;
            set.push(SetEntry {
                item,
                point: table.actions[a].point,
                gap_influence: g,
                key: g,
            });
        }
        if sum > gap && best.as_ref().map_or(true, |b| set.len() < b.1.len()) {
            best = Some((c, set, sum));
        }
    }
    match best {
        Some((c, set, sum)) => Explanation {
            user: table.user,
            method: Method::Accent,
            rec: table.rec,
            rec_star: Some(table.candidates[c]),
            alt: table.candidates[c],
            set,
            skipped: Vec::new(),
            estimated_gap_initial: table.gap(c),
            estimated_gap_remaining: table.gap(c) - sum,
            gap_evaluations: evaluations,
        },
        None => {
            let mut e = Explanation::failure(table.user, Method::Accent, table.rec, table.candidates[0], table.gap(0));
            e.gap_evaluations = evaluations;
            e
        }
    }
}

/// Gap filling against whichever candidate currently ranks highest. Like
/// [`accent_on`], a failure carries an empty set.
pub fn accent_ova_on(table: &InfluenceTable) -> Explanation {
    let mut sums = GapSums::new(table);
    let mut used = vec![false; table.actions.len()];
    let mut chosen = Vec::new();
    let mut evaluations = 0;
    loop {
        let (runner, beaten) = sums.leader();
        if beaten {
            return finish(table, Method::AccentOva, &chosen, Vec::new(), runner, true, evaluations);
        }
        let mut pick: Option<(usize, f64)> = None;
        for a in (0..table.actions.len()).filter(|&a| !used[a]) {
            evaluations += 1;
            let g = table.gap_influence(a, runner);
            let item = table.actions[a].item;
            if pick.map_or(true, |p| g > p.1 || (g == p.1 && item < table.actions[p.0].item)) {
                pick = Some((a, g));
            }
        }
        match pick {
            Some((a, g)) if g > 0.0 => {
                used[a] = true;
                chosen.push((a, g));
                sums.add(a);
            }
            _ => return finish(table, Method::AccentOva, &[], Vec::new(), runner, false, evaluations),
        }
    }
}

/// Shared loop of the influence baselines. `filter` keeps only actions that
/// shrink the gap to the original runner-up.
fn fia_family(table: &InfluenceTable, filter: bool) -> Explanation {
    let method = if filter { Method::Fia } else { Method::PureFia };
    let mut ranked: Vec<(usize, f64, ItemId)> = (0..table.actions.len())
        .map(|a| (a, table.score_influence(a, 0), table.actions[a].item))
        .collect();
    ranked.sort_by(by_key_then_item);
    let mut sums = GapSums::new(table);
    let mut chosen = Vec::new();
    let mut skipped = Vec::new();
    let mut evaluations = 0;
    for &(a, key, item) in &ranked {
        if filter {
            evaluations += 1;
            if table.gap_influence(a, 0) <= 0.0 {
                skipped.push(item);
                continue;
            }
        }
        chosen.push((a, key));
        sums.add(a);
        let (leader, beaten) = sums.leader();
        if beaten {
            return finish(table, method, &chosen, skipped, leader, true, evaluations);
        }
    }
    finish(table, method, &chosen, skipped, 0, false, evaluations)
}

/// Actions by descending influence on `ŷ_rec`, until the estimated top item
/// of `{rec} ∪ I_rep` changes.
pub fn pure_fia_on(table: &InfluenceTable) -> Explanation {
    fia_family(table, false)
}

/// As [`pure_fia_on`], skipping actions whose influence on the gap to the
/// original runner-up is not positive.
pub fn fia_on(table: &InfluenceTable) -> Explanation {
    fia_family(table, true)
}

/// Scores of `[rec, candidates...]` with `removed` out of the attention pool.
fn fixed_scores(model: &TrainedModel, u: UserId, targets: &[ItemId], removed: &[ItemId]) -> Result<Vec<f64>> {
    targets.iter().map(|&t| model.score_without(u, t, removed)).collect()
}

fn leader_of(scores: &[f64]) -> (usize, bool) {
    let mut best = 1;
    for c in 2..scores.len() {
        if scores[c] > scores[best] {
            best = c;
        }
    }
    (best - 1, scores[best] > scores[0])
}

/// Attention baselines: parameters stay fixed, actions leave the attention
/// pool in order of descending weight on `rec`.
fn attention_family(
    model: &TrainedModel,
    u: UserId,
    rec: ItemId,
    actions: &[ItemId],
    candidates: &[ItemId],
    filter: bool,
) -> Result<Explanation> {
    let method = if filter { Method::Attention } else { Method::PureAttention };
    check_inputs(model, u, rec, actions, candidates)?;
    let ds = model.dataset();
    let profile = ds.profile(u);
    let weights = model.attention_weights(u, rec)?;
    let mut ranked: Vec<(usize, f64, ItemId)> = actions
        .iter()
        .map(|&i| {
            let pos = profile.binary_search(&i).expect("checked");
            (pos, weights[pos], i)
        })
        .collect();
    ranked.sort_by(by_key_then_item);

    let mut targets = vec![rec];
    targets.extend_from_slice(candidates);
    let limit = profile.len() - 1;
    let mut removed: Vec<ItemId> = Vec::new();
    let mut keys = Vec::new();
    let mut history = vec![fixed_scores(model, u, &targets, &[])?];
    let mut skipped = Vec::new();
    let mut evaluations = 0;
    let mut outcome: Option<usize> = None;
    for &(_, w, item) in &ranked {
        if removed.len() == limit {
            break;
        }
        removed.push(item);
        let scores = fixed_scores(model, u, &targets, &removed)?;
        if filter {
            evaluations += 1;
            let last = history.last().expect("nonempty");
            if scores[0] - scores[1] >= last[0] - last[1] {
                removed.pop();
                skipped.push(item);
                continue;
            }
        }
        keys.push(w);
        history.push(scores);
        let (leader, beaten) = leader_of(history.last().expect("nonempty"));
        if beaten {
            outcome = Some(leader);
            break;
        }
    }
    let alt = outcome.unwrap_or(0);
    let gap_at = |s: &[f64]| s[0] - s[alt + 1];
    let set = removed
        .iter()
        .enumerate()
        .map(|(k, &item)| SetEntry {
            item,
            point: ds.action_point(u, item).expect("profile item has a point"),
            gap_influence: gap_at(&history[k]) - gap_at(&history[k + 1]),
            key: keys[k],
        })
        .collect();
    Ok(Explanation {
        user: u,
        method,
        rec,
        rec_star: outcome.map(|c| candidates[c]),
        alt: candidates[alt],
        set,
        skipped,
        estimated_gap_initial: gap_at(&history[0]),
        estimated_gap_remaining: gap_at(history.last().expect("nonempty")),
        gap_evaluations: evaluations,
    })
}

fn check_inputs(model: &TrainedModel, u: UserId, rec: ItemId, actions: &[ItemId], candidates: &[ItemId]) -> Result<()> {
    let ds = model.dataset();
    ds.check_user(u)?;
    ds.check_item(rec)?;
    if actions.is_empty() {
        return Err(Error::contract(format!("user {u} has no actions to remove")));
    }
    if candidates.is_empty() {
        return Err(Error::contract("no replacement candidates"));
    }
    if candidates.contains(&rec) {
        return Err(Error::contract("rec is among the replacement candidates"));
    }
    for (k, c) in candidates.iter().enumerate() {
        ds.check_item(*c)?;
        if candidates[..k].contains(c) {
            return Err(Error::contract(format!("candidate {c} listed twice")));
        }
    }
    let profile = ds.profile(u);
    for (k, i) in actions.iter().enumerate() {
        if profile.binary_search(i).is_err() {
            return Err(Error::contract(format!("item {i} is not an action of user {u}")));
        }
        if actions[..k].contains(i) {
            return Err(Error::contract(format!("action {i} listed twice")));
        }
    }
    let top = model.topk(u, 1, None)?;
    if top.first().map(|t| t.0) != Some(rec) {
        return Err(Error::contract(format!("item {rec} is not user {u}'s top recommendation")));
    }
    Ok(())
}

pub fn accent(
    model: &TrainedModel,
    u: UserId,
    rec: ItemId,
    actions: &[ItemId],
    candidates: &[ItemId],
    cfg: &InfluenceConfig,
) -> Result<Explanation> {
    Ok(accent_on(&InfluenceTable::build(model, u, rec, actions, candidates, cfg)?))
}

pub fn accent_ova(
    model: &TrainedModel,
    u: UserId,
    rec: ItemId,
    actions: &[ItemId],
    candidates: &[ItemId],
    cfg: &InfluenceConfig,
) -> Result<Explanation> {
    Ok(accent_ova_on(&InfluenceTable::build(model, u, rec, actions, candidates, cfg)?))
}

pub fn pure_fia(
    model: &TrainedModel,
    u: UserId,
    rec: ItemId,
    actions: &[ItemId],
    candidates: &[ItemId],
    cfg: &InfluenceConfig,
) -> Result<Explanation> {
    Ok(pure_fia_on(&InfluenceTable::build(model, u, rec, actions, candidates, cfg)?))
}

pub fn fia(
    model: &TrainedModel,
    u: UserId,
    rec: ItemId,
    actions: &[ItemId],
    candidates: &[ItemId],
    cfg: &InfluenceConfig,
) -> Result<Explanation> {
    Ok(fia_on(&InfluenceTable::build(model, u, rec, actions, candidates, cfg)?))
}

pub fn pure_attention(
    model: &TrainedModel,
    u: UserId,
    rec: ItemId,
    actions: &[ItemId],
    candidates: &[ItemId],
) -> Result<Explanation> {
    attention_family(model, u, rec, actions, candidates, false)
}

pub fn attention(
    model: &TrainedModel,
    u: UserId,
    rec: ItemId,
    actions: &[ItemId],
    candidates: &[ItemId],
) -> Result<Explanation> {
    attention_family(model, u, rec, actions, candidates, true)
}

/// Runs `method` given a prebuilt table (influence methods) or directly on
/// the model (attention methods). `table` may carry more candidates than
/// `k - 1`; only the first `k - 1` are used.
pub fn run_method(
    model: &TrainedModel,
    method: Method,
    table: &InfluenceTable,
    k: usize,
) -> Result<Explanation> {
    if !method.supports(model.kind()) {
        return Err(Error::Unsupported(format!(
            "{method} requires the attention model"
        )));
    }
    if k < 2 {
        return Err(Error::contract("k must be at least 2"));
    }
    let view = table.truncated(k - 1);
    match method {
        Method::Accent => Ok(accent_on(&view)),
        Method::AccentOva => Ok(accent_ova_on(&view)),
        Method::PureFia => Ok(pure_fia_on(&view)),
        Method::Fia => Ok(fia_on(&view)),
        Method::PureAttention => pure_attention(model, view.user, view.rec, &view.action_items(), &view.candidates),
        Method::Attention => attention(model, view.user, view.rec, &view.action_items(), &view.candidates),
    }
}

/// Explains `u`'s top recommendation with `method` against the top-`k` list.
pub fn explain(model: &TrainedModel, method: Method, u: UserId, k: usize, cfg: &InfluenceConfig) -> Result<Explanation> {
    if !method.supports(model.kind()) {
        return Err(Error::Unsupported(format!(
            "{method} requires the attention model"
        )));
    }
    let table = if method.uses_influence() {
        InfluenceTable::for_user(model, u, k, cfg)?
    } else {
        InfluenceTable::scores_only(model, u, k)?
    };
    run_method(model, method, &table, k)
}

/// Extends a greedy explanation by the next positive-influence action
/// against its `alt`, in the same ranked order. `None` when nothing is left.
pub fn resume_once(table: &InfluenceTable, e: &Explanation) -> Option<Explanation> {
    let c = table.candidates.iter().position(|&i| i == e.alt)?;
    let taken = e.items();
    let mut ranked: Vec<(usize, f64, ItemId)> = (0..table.actions.len())
        .filter(|&a| !taken.contains(&table.actions[a].item))
        .map(|a| (a, table.gap_influence(a, c), table.actions[a].item))
        .collect();
    ranked.sort_by(by_key_then_item);
    let &(a, g, item) = ranked.first()?;
    if g <= 0.0 {
        return None;
    }
    let mut out = e.clone();
    out.set.push(SetEntry {
        item,
        point: table.actions[a].point,
        gap_influence: g,
        key: g,
    });
    out.estimated_gap_remaining = out.estimated_gap_initial - out.estimated_set_influence();
    out.gap_evaluations += ranked.len();
    out.rec_star = Some(e.alt);
    Some(out)
}
