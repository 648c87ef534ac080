"""Ledger analytics: entity clustering, balances, concentration, pool shares.

Builds a toy economy, clusters addresses by co-spending (skipping a planted
CoinJoin), then summarizes who holds the coins and who mined the blocks.

Run: python3 demos/04_entities_and_wealth.py
"""

from chainobs import ledger
from chainobs.ledger import COIN, LedgerTx, PoolTagMap

TS = 1_552_000_000


def cb(txid, outputs, script, height):
    return LedgerTx(txid, height, TS + height * 600, True, (), tuple(outputs), script)


def spend(txid, inputs, outputs, height):
    return LedgerTx(txid, height, TS + height * 600, False, tuple(inputs), tuple(outputs))


print("== A small economy ==")
txs = [
    cb("cb0", [("alice1", 50 * COIN)], b"/poolA/", 0),
    cb("cb1", [("bob1", 50 * COIN)], b"/poolA/", 1),
    cb("cb2", [("carol1", 50 * COIN)], b"/poolB/", 2),
    cb("cb3", [("dave1", 50 * COIN)], b"anonymous", 3),
    # alice pays bob from two of her addresses -> alice1+alice2 merge
    spend("t1", [("alice1", 50 * COIN)], [("alice2", 30 * COIN), ("bob2", 20 * COIN)], 4),
    spend("t2", [("alice2", 30 * COIN), ("alice1", 0)], [("alice3", 30 * COIN)], 5),
    # bob consolidates, linking bob1 and bob2
    spend("t3", [("bob1", 50 * COIN), ("bob2", 20 * COIN)], [("bob3", 70 * COIN)], 6),
    # a CoinJoin-shaped mix: equal outputs, multiple inputs -> must NOT merge
    spend(
        "mix",
        [("carol1", 10 * COIN), ("dave1", 10 * COIN)],
        [("mix1", 10 * COIN), ("mix2", 10 * COIN), ("carol2", 0), ("dave2", 0)],
        7,
    ),
]
print(f"{len(txs)} transactions, {sum(1 for t in txs if t.is_coinbase)} of them coinbases\n")

print("== Clustering by co-spending ==")
partition = ledger.build_partition(txs)
for entity, members in sorted(partition.entities().items()):
    if len(members) > 1:
        print(f"  entity {entity}: {sorted(members)}")
print("carol1 and dave1 stay separate entities: the mix transaction matched")
print(f"the CoinJoin filter (is_coinjoin -> {ledger.is_coinjoin(txs[-1])}).\n")

print("== Balances ==")
balances = ledger.entity_balances(txs, partition)
nonzero = {e: b for e, b in balances.items() if b > 0}
for entity, sat in sorted(nonzero.items(), key=lambda kv: -kv[1]):
    print(f"  {entity:<8} {sat / COIN:>8.2f} coins")
print(f"zero-balance entities retained: {len(balances) - len(nonzero)}\n")

print("== Concentration ==")
rows = ledger.top_holders(nonzero, partition, k=3)
print(f"{'entity':<8} {'addrs':>5} {'coins':>8} {'cum share':>9}")
for row in rows:
    print(f"{row.entity:<8} {row.address_count:>5} {row.balance / COIN:>8.2f} {row.cumulative_share:>9.3f}")

values = list(nonzero.values())
print(f"\ngini over nonzero balances: {ledger.gini(values):.4f}")
print("lorenz curve (population share -> wealth share):")
for p, w in ledger.lorenz_points(values):
    bar = "#" * round(w * 40)
    print(f"  {p:>5.2f} {w:>5.2f} |{bar}")

print("\n== Mined-block attribution ==")
tags = PoolTagMap(coinbase_tags={"/poolA/": "PoolA", "/poolB/": "PoolB"}, payout_addresses={})
coinbases = [t for t in txs if t.is_coinbase]
for bucket, pools in ledger.mining_shares(coinbases, tags).items():
    shares = ", ".join(f"{pool} {share:.0%}" for pool, share in pools.items())
    print(f"  {bucket}: {shares}")
print("the coinbase without a known signature lands in Unknown.")
