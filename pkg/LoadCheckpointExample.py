import os
import chromaquery.cqfiles as cqfiles
import chromaquery.cqtrainer as cqtrainer

scriptDir = os.path.dirname(os.path.realpath(__file__))
checkpoint = os.path.join(scriptDir, 'runs', 'example', 'checkpoint.pt')

payload = cqfiles.load_checkpoint(checkpoint)
print('iteration ' + str(payload['iteration']))
for key, value in payload['config'].items():
    print(key + ' = ' + str(value))

# continue training for another 100 iterations with the stored config
trainer = cqtrainer.Trainer.from_checkpoint(checkpoint, output_dir=os.path.join(scriptDir, 'runs', 'example'))
trainer.fit(total_iters=trainer.iteration + 100)
