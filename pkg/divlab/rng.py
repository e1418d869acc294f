"""splitmix64 random streams with hash-based stream splitting."""
import hashlib

MASK64 = (1 << 64) - 1


class Rng:
    def __init__(self, seed: int):
        self.state = seed & MASK64

    @classmethod
    def derive(cls, seed, *labels):
        """Independent stream for (seed, label, ...), e.g. (seed, "reorder", 3)."""
        key = ":".join(str(part) for part in (seed, *labels)).encode("utf-8")
        digest = hashlib.blake2b(key, digest_size=8).digest()
        return cls(int.from_bytes(digest, "little"))

    def next_u64(self):
        self.state = (self.state + 0x9E3779B97F4A7C15) & MASK64
        z = self.state
        z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
        z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
        return z ^ (z >> 31)

    def random(self):
        """Uniform float in [0, 1)."""
        return (self.next_u64() >> 11) * (1.0 / (1 << 53))

    def below(self, n):
        """Uniform integer in [0, n) without modulo bias."""
        if n <= 0:
            raise ValueError("n must be positive")
        limit = ((1 << 64) // n) * n
        while True:
            r = self.next_u64()
            if r < limit:
                return r % n

    def randint(self, lo, hi):
        return lo + self.below(hi - lo + 1)

    def coin(self, p):
        return p > 0 and (p >= 1 or self.random() < p)

    def choice(self, seq):
        return seq[self.below(len(seq))]

    def weighted_choice(self, items, weights):
        total = sum(weights)
        point = self.random() * total
        for item, weight in zip(items, weights):
            if point < weight:
                return item
            point -= weight
        return items[-1]

    def shuffle(self, items):
        """Fisher-Yates in place."""
        for i in range(len(items) - 1, 0, -1):
            j = self.below(i + 1)
            items[i], items[j] = items[j], items[i]
        return items

    def sample(self, population, k):
        pool = list(population)
        self.shuffle(pool)
        return pool[:k]

    def signed32(self):
        return (self.next_u64() & 0xFFFFFFFF) - (1 << 31)
