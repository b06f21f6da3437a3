use std::sync::{Arc, RwLock};

use rand_chacha::ChaCha8Rng;

use crate::embedding::VectorTable;
use crate::retrieval::PairStore;

use super::{Bot, BotContext, BotError, BotResponse};

/// Reuses the response of a nearby stored query. The store may be grown
/// while the bot is live.
#[derive(Clone, Debug)]
pub struct RetrievalBot {
    store: Arc<RwLock<PairStore>>,
    table: Arc<VectorTable>,
    k: usize,
}

impl RetrievalBot {
    pub fn new(store: Arc<RwLock<PairStore>>, table: Arc<VectorTable>, k: usize) -> Self {
        Self { store, table, k }
    }

    pub fn chorus(store: Arc<RwLock<PairStore>>, table: Arc<VectorTable>) -> Self {
        Self::new(store, table, 2)
    }

    pub fn interview(store: Arc<RwLock<PairStore>>, table: Arc<VectorTable>) -> Self {
        Self::new(store, table, 3)
    }

    pub fn store(&self) -> &Arc<RwLock<PairStore>> {
        &self.store
    }

    pub fn k(&self) -> usize {
        self.k
    }
}

impl Bot for RetrievalBot {
    fn respond(&self, ctx: &BotContext, rng: &mut ChaCha8Rng) -> Result<BotResponse, BotError> {
        let store = self
            .store
            .read()
            .map_err(|_| BotError::BadReply("pair store lock poisoned".into()))?;
        Ok(
            match store.retrieve_text(&ctx.user_message, &self.table, self.k, rng) {
                Some(text) => BotResponse::text(text),
                None => BotResponse::decline(),
            },
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::retrieval::{QueryResponsePair, VoteCounts};
    use rand::SeedableRng;

    fn table() -> Arc<VectorTable> {
        Arc::new(
            VectorTable::from_entries(2, [("hello", vec![1.0, 0.0]), ("weather", vec![0.0, 1.0])])
                .unwrap(),
        )
    }

    #[test]
    fn empty_store_declines() {
        let bot = RetrievalBot::chorus(Arc::new(RwLock::new(PairStore::new(2))), table());
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let r = bot.respond(&BotContext::single("hello"), &mut rng).unwrap();
        assert_eq!(r.text, None);
    }

    #[test]
    fn answers_from_nearest_pair() {
        let t = table();
        let mut store = PairStore::new(2);
        for (q, r) in [("hello", "hi there"), ("weather", "it is sunny")] {
            store.push(
                QueryResponsePair {
                    query: q.into(),
                    response: r.into(),
                    votes: VoteCounts { up: 1, down: 0 },
                    source: String::new(),
                },
                &t,
            );
        }
        let bot = RetrievalBot::new(Arc::new(RwLock::new(store)), t, 1);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let r = bot
            .respond(&BotContext::single("weather?"), &mut rng)
            .unwrap();
        assert_eq!(r.text.as_deref(), Some("it is sunny"));
        let oov = bot.respond(&BotContext::single("zzz"), &mut rng).unwrap();
        assert_eq!(oov.text, None);
    }
}
