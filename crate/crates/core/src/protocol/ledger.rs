//! Integer payment ledger with escrow held by the TP.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::Role;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PaymentKind {
    /// Client → TP, held until the TP decides.
    Escrow,
    /// TP → Merchant, releasing the escrow.
    Transfer,
    /// TP → Client, returning the escrow.
    Refund,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PaymentEvent {
    pub kind: PaymentKind,
    pub from: Role,
    pub to: Role,
    pub amount: u64,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MoneyLedger {
    opening: BTreeMap<Role, i64>,
    balances: BTreeMap<Role, i64>,
    escrow: u64,
    events: Vec<PaymentEvent>,
}

/// Net balance change per party over a run.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MoneySummary {
    pub deltas: BTreeMap<Role, i64>,
    pub escrow_outstanding: u64,
    pub events: Vec<PaymentEvent>,
}

impl MoneySummary {
    pub fn is_conserved(&self) -> bool {
        self.deltas.values().sum::<i64>() == 0
    }
}

impl MoneyLedger {
    pub fn new(opening: BTreeMap<Role, i64>) -> Self {
        let mut balances = opening.clone();
        for r in Role::ALL {
            balances.entry(r).or_insert(0);
        }
        MoneyLedger {
            opening: balances.clone(),
            balances,
            escrow: 0,
            events: Vec::new(),
        }
    }

    pub fn balance(&self, role: Role) -> i64 {
        self.balances[&role]
    }

    pub fn escrow(&self) -> u64 {
        self.escrow
    }

    fn amount(amount: u64) -> Result<i64> {
        i64::try_from(amount).map_err(|_| Error::invalid(format!("amount {amount} too large")))
    }

    fn mv(&mut self, kind: PaymentKind, from: Role, to: Role, amount: u64) -> Result<()> {
        let a = Self::amount(amount)?;
        *self.balances.get_mut(&from).expect("all roles present") -= a;
        *self.balances.get_mut(&to).expect("all roles present") += a;
        self.events.push(PaymentEvent {
            kind,
            from,
            to,
            amount,
        });
        Ok(())
    }

    /// Client pays into escrow. Fails if the client cannot cover it or an
    /// escrow is already open.
    pub fn escrow_from_client(&mut self, amount: u64) -> Result<()> {
        if self.escrow != 0 {
            return Err(Error::invalid("an escrow is already open"));
        }
        if self.balance(Role::Client) < Self::amount(amount)? {
            return Err(Error::invalid(format!(
                "client balance {} cannot cover {amount}",
                self.balance(Role::Client)
            )));
        }
        self.mv(PaymentKind::Escrow, Role::Client, Role::Tp, amount)?;
        self.escrow = amount;
        Ok(())
    }

    pub fn release_to_merchant(&mut self) -> Result<()> {
        let a = std::mem::take(&mut self.escrow);
        if a == 0 {
            return Err(Error::invalid("no escrow to release"));
        }
        self.mv(PaymentKind::Transfer, Role::Tp, Role::Merchant, a)
    }

    pub fn refund_client(&mut self) -> Result<()> {
        let a = std::mem::take(&mut self.escrow);
        if a == 0 {
            return Err(Error::invalid("no escrow to refund"));
        }
        self.mv(PaymentKind::Refund, Role::Tp, Role::Client, a)
    }

    pub fn summary(&self) -> MoneySummary {
        MoneySummary {
            deltas: self
                .balances
                .iter()
                .map(|(r, b)| (*r, b - self.opening[r]))
                .collect(),
            escrow_outstanding: self.escrow,
            events: self.events.clone(),
        }
    }
}
